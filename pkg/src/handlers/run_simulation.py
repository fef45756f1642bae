"""
Handler for the ``run`` verb: one simulation with all its output files.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Tuple

from config import METRICS_FILENAME, RESOLVED_FILENAME, WAVEFORMS_FILENAME
from core.engine import STATUS_COMPLETED, run
from core.metrics import run_metrics
from handlers.request import RunRequest
from utils.errors import ConfigurationError, SimulationError
from utils.report_helpers import (
    EXIT_COLLAPSED,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    create_error_report,
    create_report,
    write_json,
)
from utils.scenario_loader import ResolvedScenario, resolve_scenario
from utils.svg_plots import FIGURE_PANELS, plot_waveforms
from utils.waveform_io import write_waveforms

logger = logging.getLogger(__name__)


def execute_run(resolved: ResolvedScenario, out_dir: Path) -> Tuple[int, Dict[str, Any]]:
    """
    Simulate a resolved scenario and write every output into out_dir.

    Returns:
        (exit status, metrics)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / RESOLVED_FILENAME, resolved.document())

    result = run(resolved.scenario)
    metrics = run_metrics(resolved.scenario, result)

    write_waveforms(result.log, out_dir / WAVEFORMS_FILENAME)
    write_json(out_dir / METRICS_FILENAME, metrics)
    panels = [q for q in FIGURE_PANELS if result.log.devices(q)]
    plot_waveforms(result.log, out_dir, panels)

    failed = metrics['collapsed'] or result.status != STATUS_COMPLETED
    return (EXIT_COLLAPSED if failed else EXIT_OK), metrics


def run_simulation(request: RunRequest) -> Dict[str, Any]:
    """
    Run one scenario.

    Writes waveforms.csv, metrics.json, resolved.json and one SVG per panel.
    Nothing is written when the scenario or an override is invalid.

    Returns:
        Report with exit status 0 (clean), 1 (configuration error) or 2 (collapse or fault)
    """
    try:
        if request.scenario_path is None or request.output_dir is None:
            raise ConfigurationError("run needs --scenario and --out")
        resolved = resolve_scenario(request.scenario_path, request.overrides)
    except SimulationError as exc:
        logger.error(exc.message)
        return create_error_report(EXIT_CONFIG_ERROR, exc.message, exc.code)

    try:
        exit_code, metrics = execute_run(resolved, Path(request.output_dir))
    except ConfigurationError as exc:
        # no operating point; only resolved.json has been written
        logger.error(exc.message)
        return create_error_report(EXIT_CONFIG_ERROR, exc.message, exc.code)
    logger.info("Outputs of '%s' written to %s", resolved.scenario.name, request.output_dir)
    return create_report(exit_code, {
        'scenario': metrics['scenario'],
        'status': metrics['status'],
        'collapsed': metrics['collapsed'],
        'message': metrics['message'],
        'output_dir': str(request.output_dir),
        'collapse': metrics['collapse'],
    })
