"""
Handler for the ``sweep`` verb: one run per value of a single parameter.

Every point is resolved and its operating point solved before any run starts,
so a configuration error in one of them aborts the whole sweep. Points run
concurrently in worker processes, each writing only into its own sub-directory.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from config import GFCSIM_THREADS, SWEEP_SUMMARY_FILENAME
from core.engine import Scenario, assemble
from core.initialization import solve_operating_point
from handlers.request import RunRequest
from handlers.run_simulation import execute_run
from utils.errors import ConfigurationError, SimulationError
from utils.report_helpers import EXIT_COLLAPSED, EXIT_CONFIG_ERROR, EXIT_OK, create_error_report, create_report
from utils.scenario_loader import ResolvedScenario, build_scenario, resolve_scenario
from utils.validators import validate_sweep_values

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ('value', 'status', 'collapsed', 't_collapse', 'min_vdc',
                   'settling_time', 'frequency_nadir', 'exit_code', 'output_dir')


def point_dirname(key: str, value: Any) -> str:
    return f"{key}={value}".replace('/', '_')


def _summary_row(value: Any, exit_code: int, metrics: Dict[str, Any], out_dir: Path,
                 scenario: Scenario) -> Dict[str, Any]:
    collapse = metrics['collapse'].values()
    crossed = [c['t_collapse'] for c in collapse if c['t_collapse'] is not None]
    settling = [metrics['settling'][f"{gfc.name}.v_dc"]['settling_time'] for gfc in scenario.gfcs]
    nadirs = [n['value'] for n in metrics['frequency_nadir'].values()]
    return {
        'value': value,
        'status': metrics['status'],
        'collapsed': metrics['collapsed'],
        't_collapse': min(crossed) if crossed else math.nan,
        'min_vdc': min(c['min_vdc'] for c in collapse),
        'settling_time': math.nan if any(s is None for s in settling) else max(settling),
        'frequency_nadir': min(nadirs) if nadirs else math.nan,
        'exit_code': exit_code,
        'output_dir': str(out_dir),
    }


def _error_row(value: Any, exc: SimulationError, out_dir: Path) -> Dict[str, Any]:
    return {
        'value': value,
        'status': exc.code.lower(),
        'collapsed': False,
        't_collapse': math.nan,
        'min_vdc': math.nan,
        'settling_time': math.nan,
        'frequency_nadir': math.nan,
        'exit_code': EXIT_CONFIG_ERROR,
        'output_dir': str(out_dir),
    }


def run_point(value: Any, tree: Dict[str, Any], provenance: Dict[str, str], out_dir: str) -> Dict[str, Any]:
    """Worker entry point: rebuild the scenario from its resolved tree and run it."""
    scenario = build_scenario(tree)
    resolved = ResolvedScenario(tree=tree, provenance=provenance, scenario=scenario)
    try:
        exit_code, metrics = execute_run(resolved, Path(out_dir))
    except ConfigurationError as exc:
        logger.error("Sweep point %r: %s", value, exc.message)
        return _error_row(value, exc, Path(out_dir))
    return _summary_row(value, exit_code, metrics, Path(out_dir), scenario)


def sweep_simulations(request: RunRequest) -> Dict[str, Any]:
    """
    Run a parameter sweep and write sweep_summary.csv.

    Returns:
        Report with exit status 0, 1 (configuration or usage error, nothing
        launched) or 2 (at least one point collapsed or faulted)
    """
    try:
        if request.scenario_path is None or request.output_dir is None:
            raise ConfigurationError("sweep needs --scenario and --out")
        if request.sweep is None:
            raise ConfigurationError("sweep needs --sweep key=v1,v2,...", key='sweep')
        key, values = request.sweep
        is_valid, error_msg = validate_sweep_values(values)
        if not is_valid:
            raise ConfigurationError(error_msg, key='sweep')
        points: List[ResolvedScenario] = [
            resolve_scenario(request.scenario_path, list(request.overrides) + [(key, value)])
            for value in values
        ]
        for point in points:
            system = assemble(point.scenario)
            solve_operating_point(system.net, [s.cfg for s in system.gfcs], [s.sm for s in system.machines])
    except SimulationError as exc:
        logger.error(exc.message)
        return create_error_report(EXIT_CONFIG_ERROR, exc.message, exc.code)

    root = Path(request.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(value, point.tree, point.provenance, str(root / point_dirname(key, value)))
            for value, point in zip(values, points)]
    workers = max(1, min(GFCSIM_THREADS, len(jobs)))
    logger.info("Sweeping %s over %d values with %d worker(s)", key, len(jobs), workers)

    if workers == 1:
        rows = [run_point(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_point, *job) for job in jobs]
            rows = [future.result() for future in futures]

    summary = pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))
    summary.insert(0, 'parameter', key)
    summary_path = root / SWEEP_SUMMARY_FILENAME
    summary.to_csv(summary_path, index=False, na_rep='nan', lineterminator='\n')
    logger.info("Wrote %s", summary_path)

    exit_code = EXIT_COLLAPSED if any(row['exit_code'] != EXIT_OK for row in rows) else EXIT_OK
    return create_report(exit_code, {
        'parameter': key,
        'summary': str(summary_path),
        'rows': rows,
    })
