"""
Command-line front end.

    gfcsim run      --scenario FILE --out DIR [--set key=value ...]
    gfcsim sweep    --scenario FILE --out DIR --sweep key=v1,v2,... [--set ...]
    gfcsim plot     CSV [--out DIR] [--channels v_dc,i_dc]
    gfcsim validate --scenario FILE [--set ...]

Exit status: 0 clean, 1 configuration or usage error, 2 collapsed or faulted run.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import GFCSIM_LOG_LEVEL
from handlers.plot_waveforms import plot_waveforms
from handlers.request import RunRequest, parse_channels, parse_sweep
from handlers.run_simulation import run_simulation
from handlers.sweep_simulations import sweep_simulations
from handlers.validate_scenario import validate_scenario
from utils.errors import SimulationError
from utils.report_helpers import EXIT_CONFIG_ERROR, create_error_report, to_json

logger = logging.getLogger(__name__)

HANDLERS = {
    'run': run_simulation,
    'sweep': sweep_simulations,
    'plot': plot_waveforms,
    'validate': validate_scenario,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as exceptions so they map onto exit status 1."""

    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='gfcsim', description='Grid-forming converter EMT simulator')
    verbs = parser.add_subparsers(dest='verb', required=True, parser_class=_Parser)

    def scenario_args(sub: argparse.ArgumentParser, needs_out: bool) -> None:
        sub.add_argument('--scenario', type=Path, required=True, help='scenario JSON file')
        if needs_out:
            sub.add_argument('--out', type=Path, required=True, help='output directory')
        sub.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                         help='override a scenario parameter (repeatable)')

    scenario_args(verbs.add_parser('run', help='run one scenario'), needs_out=True)
    sweep = verbs.add_parser('sweep', help='run one scenario per parameter value')
    scenario_args(sweep, needs_out=True)
    sweep.add_argument('--sweep', required=True, metavar='KEY=V1,V2,...', help='parameter and values')

    plot = verbs.add_parser('plot', help='plot channels of a waveforms.csv')
    plot.add_argument('csv', type=Path, help='waveforms.csv')
    plot.add_argument('--out', type=Path, default=None, help='output directory (default: next to the CSV)')
    plot.add_argument('--channels', default='', help='comma-separated channels or quantities (default: all)')

    scenario_args(verbs.add_parser('validate', help='parse a scenario without running it'), needs_out=False)
    return parser


def build_request(args: argparse.Namespace) -> RunRequest:
    return RunRequest(
        scenario_path=getattr(args, 'scenario', None),
        output_dir=getattr(args, 'out', None),
        overrides=list(getattr(args, 'overrides', []) or []),
        sweep=parse_sweep(args.sweep) if getattr(args, 'sweep', None) else None,
        channels=parse_channels(getattr(args, 'channels', None)),
        csv_path=getattr(args, 'csv', None),
    )


def dispatch(argv: Optional[List[str]] = None) -> Dict[str, Any]:
    """Parse arguments and run the matching handler; returns its report."""
    try:
        args = build_parser().parse_args(argv)
        request = build_request(args)
    except UsageError as exc:
        return create_error_report(EXIT_CONFIG_ERROR, str(exc), 'USAGE_ERROR')
    except SimulationError as exc:
        return create_error_report(EXIT_CONFIG_ERROR, exc.message, exc.code)
    return HANDLERS[args.verb](request)


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, GFCSIM_LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
    )
    report = dispatch(argv)
    print(to_json(report['body']))
    return report['exit_code']


if __name__ == '__main__':
    sys.exit(main())
