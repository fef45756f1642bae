"""
Tests for the command-line verbs and their handlers.
"""
import json

import pandas as pd
import pytest

from cli import dispatch, main
from core.engine import STATUS_COLLAPSED, RunResult
from handlers.request import RunRequest, parse_channels, parse_sweep
from handlers.sweep_simulations import point_dirname
from utils.errors import ConfigurationError


class TestRequestParsing:
    """Tests for sweep and channel arguments."""

    def test_parse_sweep(self):
        """Test values are parsed as JSON literals."""
        assert parse_sweep('gfc1.controller.alpha=0,0.5,1') == ('gfc1.controller.alpha', [0, 0.5, 1])

    def test_parse_sweep_empty(self):
        """Test an empty value list is passed through for the handler to reject."""
        assert parse_sweep('gfc1.controller.alpha=') == ('gfc1.controller.alpha', [])

    def test_parse_sweep_malformed(self):
        """Test a sweep without '=' is rejected."""
        with pytest.raises(ConfigurationError):
            parse_sweep('alpha')

    def test_parse_channels(self):
        """Test comma-separated channels, empty meaning all."""
        assert parse_channels('v_dc, i_dc') == ['v_dc', 'i_dc']
        assert parse_channels('') is None

    def test_point_dirname(self):
        """Test sweep sub-directories are named key=value."""
        assert point_dirname('gfc1.controller.alpha', 0.5) == 'gfc1.controller.alpha=0.5'


class TestUsage:
    """Tests for argument errors."""

    def test_missing_verb(self):
        """Test no verb is a usage error with exit 1."""
        report = dispatch([])
        assert report['exit_code'] == 1
        assert report['body']['error']['code'] == 'USAGE_ERROR'

    def test_missing_scenario(self, tmp_path):
        """Test run without --scenario is a usage error."""
        assert dispatch(['run', '--out', str(tmp_path)])['exit_code'] == 1

    def test_unknown_verb(self):
        """Test an unknown verb is a usage error."""
        assert dispatch(['simulate'])['exit_code'] == 1


class TestValidate:
    """Tests for the validate verb."""

    def test_valid(self, scenario_file):
        """Test the summary of a valid scenario."""
        report = dispatch(['validate', '--scenario', str(scenario_file)])
        assert report['exit_code'] == 0
        data = report['body']['data']
        assert data['gfcs'] == {'gfc1': 'vsg'}
        assert data['events'] == 1
        assert data['network']['buses'] == 2
        assert data['z_base_ohm'] == pytest.approx(529.0)

    def test_invalid_override(self, scenario_file):
        """Test a bad override is a configuration error naming the key."""
        report = dispatch(['validate', '--scenario', str(scenario_file), '--set', 'gfc1.controller.alpha=2'])
        assert report['exit_code'] == 1
        assert 'gfcs.gfc1.controller.alpha' in report['body']['error']['message']

    def test_shipped_scenarios(self, scenario_dir):
        """Test every shipped scenario validates."""
        for path in sorted(scenario_dir.glob('*.json')):
            assert dispatch(['validate', '--scenario', str(path)])['exit_code'] == 0, path.name


class TestRun:
    """Tests for the run verb."""

    def test_outputs(self, scenario_file, tmp_path):
        """Test a clean run writes waveforms, metrics, resolved scenario and panels."""
        out = tmp_path / 'out'
        report = dispatch(['run', '--scenario', str(scenario_file), '--out', str(out)])
        assert report['exit_code'] == 0
        assert report['body']['status'] == 'completed'
        for name in ('waveforms.csv', 'metrics.json', 'resolved.json', 'v_dc.svg', 'i_dc.svg', 'omega.svg'):
            assert (out / name).is_file(), name
        metrics = json.loads((out / 'metrics.json').read_text(encoding='utf-8'))
        assert metrics['collapsed'] is False
        frame = pd.read_csv(out / 'waveforms.csv')
        assert frame.columns[0] == 't_s'
        assert 'gfc1.v_dc' in frame.columns

    def test_bad_override_writes_nothing(self, scenario_file, tmp_path):
        """Test an unknown override exits 1 before creating the output directory."""
        out = tmp_path / 'out'
        report = dispatch(['run', '--scenario', str(scenario_file), '--out', str(out),
                           '--set', 'gfc1.controller.alpah=1'])
        assert report['exit_code'] == 1
        assert not out.exists()

    def test_rerun_from_resolved(self, scenario_file, tmp_path):
        """Test rerunning resolved.json reproduces the waveforms byte for byte."""
        first = tmp_path / 'first'
        second = tmp_path / 'second'
        dispatch(['run', '--scenario', str(scenario_file), '--out', str(first), '--set', 'gfc1.controller.alpha=0.8'])
        report = dispatch(['run', '--scenario', str(first / 'resolved.json'), '--out', str(second)])
        assert report['exit_code'] == 0
        assert (first / 'waveforms.csv').read_bytes() == (second / 'waveforms.csv').read_bytes()
        assert (first / 'resolved.json').read_bytes() == (second / 'resolved.json').read_bytes()

    def test_collapse_exit_code(self, scenario_file, tmp_path, monkeypatch):
        """Test a collapsed run exits 2 and still writes its outputs."""
        import handlers.run_simulation as handler

        real_run = handler.run

        def stopped_run(scenario):
            result = real_run(scenario)
            return RunResult(result.log, result.final_state, STATUS_COLLAPSED, 'gfc1 DC link fell')

        monkeypatch.setattr(handler, 'run', stopped_run)
        out = tmp_path / 'out'
        report = dispatch(['run', '--scenario', str(scenario_file), '--out', str(out)])
        assert report['exit_code'] == 2
        assert report['body']['collapsed'] is True
        assert (out / 'waveforms.csv').is_file()
        assert (out / 'metrics.json').is_file()

    def test_no_operating_point(self, scenario_file, tmp_path):
        """Test a DC source too small for the dispatch exits 1."""
        report = dispatch(['run', '--scenario', str(scenario_file), '--out', str(tmp_path / 'out'),
                           '--set', 'gfc1.converter.i_dc_max=0.01'])
        assert report['exit_code'] == 1
        assert 'operating point' in report['body']['error']['message']
        assert not (tmp_path / 'out' / 'waveforms.csv').exists()

    def test_main_prints_json(self, scenario_file, capsys):
        """Test main prints the report body and returns the exit status."""
        assert main(['validate', '--scenario', str(scenario_file)]) == 0
        assert json.loads(capsys.readouterr().out)['message'] == 'Scenario is valid'


class TestSweep:
    """Tests for the sweep verb."""

    def test_empty_value_list(self, scenario_file, tmp_path):
        """Test an empty sweep exits 1 and launches nothing."""
        out = tmp_path / 'sweep'
        report = dispatch(['sweep', '--scenario', str(scenario_file), '--out', str(out),
                           '--sweep', 'gfc1.controller.alpha='])
        assert report['exit_code'] == 1
        assert not out.exists()

    def test_invalid_point_aborts(self, scenario_file, tmp_path):
        """Test one invalid value aborts the sweep before any run."""
        out = tmp_path / 'sweep'
        report = dispatch(['sweep', '--scenario', str(scenario_file), '--out', str(out),
                           '--sweep', 'gfc1.controller.alpha=0.5,1.5'])
        assert report['exit_code'] == 1
        assert not out.exists()

    def test_unsolvable_point_aborts(self, scenario_file, tmp_path):
        """Test a value with no operating point aborts the sweep before any run."""
        out = tmp_path / 'sweep'
        report = dispatch(['sweep', '--scenario', str(scenario_file), '--out', str(out),
                           '--sweep', 'gfc1.converter.i_dc_max=0.3,0.01'])
        assert report['exit_code'] == 1
        assert 'operating point' in report['body']['error']['message']
        assert not out.exists()

    def test_summary(self, scenario_file, tmp_path):
        """Test one row per value and one directory per point."""
        out = tmp_path / 'sweep'
        report = dispatch(['sweep', '--scenario', str(scenario_file), '--out', str(out),
                           '--sweep', 'gfc1.controller.alpha=0.5,1.0'])
        assert report['exit_code'] == 0
        summary = pd.read_csv(out / 'sweep_summary.csv')
        assert list(summary.columns[:3]) == ['parameter', 'value', 'status']
        assert summary['value'].tolist() == [0.5, 1.0]
        assert (summary['parameter'] == 'gfc1.controller.alpha').all()
        for value in ('0.5', '1.0'):
            assert (out / f"gfc1.controller.alpha={value}" / 'waveforms.csv').is_file()

    def test_single_point_matches_run(self, scenario_file, tmp_path):
        """Test a one-value sweep reproduces the plain run with that override."""
        dispatch(['sweep', '--scenario', str(scenario_file), '--out', str(tmp_path / 'sweep'),
                  '--sweep', 'gfc1.controller.alpha=0.7'])
        dispatch(['run', '--scenario', str(scenario_file), '--out', str(tmp_path / 'run'),
                  '--set', 'gfc1.controller.alpha=0.7'])
        swept = tmp_path / 'sweep' / 'gfc1.controller.alpha=0.7' / 'waveforms.csv'
        assert swept.read_bytes() == (tmp_path / 'run' / 'waveforms.csv').read_bytes()


class TestPlot:
    """Tests for the plot verb."""

    def test_plot_existing_csv(self, scenario_file, tmp_path):
        """Test v_dc,i_dc writes exactly two panels."""
        dispatch(['run', '--scenario', str(scenario_file), '--out', str(tmp_path / 'run')])
        out = tmp_path / 'plots'
        report = dispatch(['plot', str(tmp_path / 'run' / 'waveforms.csv'), '--out', str(out),
                           '--channels', 'v_dc,i_dc'])
        assert report['exit_code'] == 0
        assert sorted(p.name for p in out.iterdir()) == ['i_dc.svg', 'v_dc.svg']

    def test_unknown_channel(self, scenario_file, tmp_path):
        """Test an unknown channel exits 1 and lists the available channels."""
        dispatch(['run', '--scenario', str(scenario_file), '--out', str(tmp_path / 'run')])
        report = dispatch(['plot', str(tmp_path / 'run' / 'waveforms.csv'), '--channels', 'vdc'])
        assert report['exit_code'] == 1
        assert 'gfc1.v_dc' in report['body']['error']['message']

    def test_missing_csv(self, tmp_path):
        """Test a missing CSV exits 1."""
        assert dispatch(['plot', str(tmp_path / 'none.csv')])['exit_code'] == 1

    def test_handler_without_csv(self):
        """Test the handler rejects a request with no CSV."""
        from handlers.plot_waveforms import plot_waveforms
        assert plot_waveforms(RunRequest())['exit_code'] == 1
