"""
Report helpers shared by the command handlers.

Every handler returns a report: an exit status and a JSON-serializable body.
The CLI prints the body and exits with the status.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_COLLAPSED = 2


def create_report(exit_code: int, body: Any) -> Dict[str, Any]:
    """
    Create a standardized handler report.

    Args:
        exit_code: Process exit status
        body: Report body (JSON serializable)

    Returns:
        Report dictionary
    """
    return {
        'exit_code': exit_code,
        'body': body,
    }


def create_error_report(exit_code: int, error_message: str, error_code: Optional[str] = None) -> Dict[str, Any]:
    """
    Create a standardized error report.

    Args:
        exit_code: Process exit status
        error_message: Human-readable error message
        error_code: Optional machine-readable error code
    """
    body = {
        'error': {
            'message': error_message
        }
    }

    if error_code:
        body['error']['code'] = error_code

    return create_report(exit_code, body)


def create_success_report(data: Any, message: Optional[str] = None, exit_code: int = EXIT_OK) -> Dict[str, Any]:
    body = {'data': data}

    if message:
        body['message'] = message

    return create_report(exit_code, body)


def to_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, default=str, allow_nan=True)


def write_json(path: Union[str, Path], payload: Any) -> Path:
    """Write a JSON document with a trailing newline and return its path."""
    path = Path(path)
    path.write_text(to_json(payload) + '\n', encoding='utf-8')
    logger.info("Wrote %s", path)
    return path
