"""
Handler for the ``validate`` verb: parse a scenario and write nothing.
"""
import logging
from typing import Any, Dict

from handlers.request import RunRequest
from utils.errors import ConfigurationError, SimulationError
from utils.report_helpers import EXIT_CONFIG_ERROR, create_error_report, create_success_report
from utils.scenario_loader import resolve_scenario

logger = logging.getLogger(__name__)


def validate_scenario(request: RunRequest) -> Dict[str, Any]:
    try:
        if request.scenario_path is None:
            raise ConfigurationError("validate needs --scenario")
        resolved = resolve_scenario(request.scenario_path, request.overrides)
    except SimulationError as exc:
        logger.error(exc.message)
        return create_error_report(EXIT_CONFIG_ERROR, exc.message, exc.code)

    scenario = resolved.scenario
    return create_success_report({
        'scenario': scenario.name,
        'network': scenario.network.counts(),
        'gfcs': {gfc.name: gfc.controller.name for gfc in scenario.gfcs},
        'events': len(scenario.events),
        'parameters': len(resolved.provenance),
        'z_base_ohm': scenario.bases.z_base_ohm,
    }, message='Scenario is valid')
