"""
The request every command handler receives.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Tuple

from utils.errors import ConfigurationError
from utils.key_tree import parse_value
from utils.validators import validate_override


@dataclass
class RunRequest:
    scenario_path: Optional[Path] = None
    output_dir: Optional[Path] = None
    overrides: List[str] = field(default_factory=list)
    sweep: Optional[Tuple[str, List[Any]]] = None
    channels: Optional[List[str]] = None
    csv_path: Optional[Path] = None


def parse_sweep(expression: str) -> Tuple[str, List[Any]]:
    """
    Parse ``key=v1,v2,...`` into (key, values); values are JSON literals.

    An empty value list is returned as such and rejected by the sweep handler.
    """
    ok, err = validate_override(expression)
    if not ok:
        raise ConfigurationError(err, key='sweep')
    key, _, text = expression.partition('=')
    values = [parse_value(item.strip()) for item in text.split(',') if item.strip()]
    return key.strip(), values


def parse_channels(spec: Optional[str]) -> Optional[List[str]]:
    if not spec:
        return None
    return [name.strip() for name in spec.split(',') if name.strip()]
