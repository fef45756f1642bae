#!/usr/bin/env python3
"""
Run every shipped scenario and regenerate its outputs and panels.

Usage: python scripts/run_all_scenarios.py [output_root]

Each scenario writes into <output_root>/<scenario name>/. Exit status is 1 if
any scenario fails to load; collapse is an expected outcome for some cases.
"""
import os
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / 'src'))

from handlers.request import RunRequest  # noqa: E402
from handlers.run_simulation import run_simulation  # noqa: E402
from utils.report_helpers import EXIT_CONFIG_ERROR  # noqa: E402

SCENARIO_DIR = ROOT / 'scenarios'
EXPECTED_COLLAPSE = {'ieee9_vsg_collapse', 'ieee9_vsg_ac_limit'}


def run_all(output_root: Path) -> int:
    failures = 0
    for path in sorted(SCENARIO_DIR.glob('*.json')):
        report = run_simulation(RunRequest(scenario_path=path, output_dir=output_root / path.stem))
        body = report['body']
        if report['exit_code'] == EXIT_CONFIG_ERROR:
            print(f"✗ {path.stem}: {body['error']['message']}")
            failures += 1
            continue
        expected = path.stem in EXPECTED_COLLAPSE
        mark = '✓' if body['collapsed'] == expected else '!'
        print(f"{mark} {path.stem}: status={body['status']} collapsed={body['collapsed']}")
    return 1 if failures else 0


if __name__ == '__main__':
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(os.environ.get('GFCSIM_OUTPUT_DIR', 'out'))
    sys.exit(run_all(root))
