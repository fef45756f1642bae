"""
Unit tests for scenario parsing, overrides and provenance.
"""
import json

import pytest

from config import OMEGA_BASE
from core.controllers import Droop, Dvoc, Vsg
from utils.errors import ConfigurationError
from utils.scenario_loader import (
    DEFAULT,
    OVERRIDE,
    PAPER,
    build_scenario,
    parse_scenario,
    read_json,
    resolve_scenario,
    resolve_tree,
)

SHIPPED = {
    'ieee9_vsg_small_step': (Vsg, 1.0, 0.78),
    'ieee9_vsg_collapse': (Vsg, 1.0, 0.9),
    'ieee9_vsg_ac_limit': (Vsg, 1.0, 0.9),
    'ieee9_vsg_feedback': (Vsg, 0.5, 0.9),
    'ieee9_droop_feedback': (Droop, 0.5, 0.9),
    'ieee9_dvoc_feedback': (Dvoc, 0.5, 0.9),
}


class TestReadJson:
    """Tests for reading scenario files."""

    def test_empty_file(self, tmp_path):
        """Test an empty file is a syntax error at line 1."""
        path = tmp_path / 'empty.json'
        path.write_text('', encoding='utf-8')
        with pytest.raises(ConfigurationError) as exc:
            read_json(path)
        assert exc.value.line == 1
        assert 'Syntax error' in exc.value.message

    def test_syntax_error_line(self, tmp_path):
        """Test the reported line is where the parser stopped."""
        path = tmp_path / 'bad.json'
        path.write_text('{\n  "name": "x",\n  "t_end" 10\n}\n', encoding='utf-8')
        with pytest.raises(ConfigurationError, match=r'\(line 3\)'):
            read_json(path)

    def test_missing_file(self, tmp_path):
        """Test a missing file is a configuration error."""
        with pytest.raises(ConfigurationError, match='Cannot read'):
            read_json(tmp_path / 'nope.json')


class TestResolveTree:
    """Tests for defaults, overrides and provenance."""

    def test_defaults_fill_every_converter(self, scenario_tree):
        """Test gfc_defaults reach each attached converter."""
        tree, _ = resolve_tree(scenario_tree)
        assert list(tree['gfcs']) == ['gfc1']
        gfc = tree['gfcs']['gfc1']
        assert gfc['controller']['kind'] == 'vsg'
        assert gfc['converter']['i_dc_max'] == 0.2845
        assert gfc['converter']['c_dc'] == 0.05
        assert gfc['inner_loop']['kp_v'] == 2.0
        assert gfc['inner_loop']['ki_v'] == 40.0

    def test_inner_loop_gains_shared_by_kinds(self, scenario_tree):
        """Test every controller kind gets the same inner-loop gains unless given."""
        tree, provenance = resolve_tree(scenario_tree, ['gfc_defaults.controller.kind=droop'])
        assert tree['gfcs']['gfc1']['inner_loop']['ki_v'] == 40.0
        assert provenance['gfcs.gfc1.inner_loop.ki_v'] == DEFAULT
        tree, _ = resolve_tree(scenario_tree, ['gfc1.inner_loop.ki_v=0.3'])
        assert tree['gfcs']['gfc1']['inner_loop']['ki_v'] == 0.3

    def test_provenance_tags(self, scenario_tree):
        """Test file tags, built-in paper values and defaults."""
        _, provenance = resolve_tree(scenario_tree)
        assert provenance['events.0.p_after'] == PAPER
        assert provenance['gfcs.gfc1.controller.vsg.J'] == PAPER
        assert provenance['bases.f_base_hz'] == PAPER
        assert provenance['simulation.dt'] == DEFAULT
        assert set(provenance.values()) <= {PAPER, DEFAULT, OVERRIDE}

    def test_override_shorthand(self, scenario_tree):
        """Test a leading converter name addresses gfcs.<name> and is tagged override."""
        tree, provenance = resolve_tree(scenario_tree, ['gfc1.controller.alpha=1.0'])
        assert tree['gfcs']['gfc1']['controller']['alpha'] == 1.0
        assert provenance['gfcs.gfc1.controller.alpha'] == OVERRIDE

    def test_override_beats_file_tag(self, scenario_tree):
        """Test an override of a paper-tagged value is tagged override."""
        tree, provenance = resolve_tree(scenario_tree, [('events.0.p_after', 0.4)])
        assert tree['events'][0]['p_after'] == 0.4
        assert provenance['events.0.p_after'] == OVERRIDE
        assert provenance['events.0.t_event'] == PAPER

    def test_changed_default_is_not_paper(self, scenario_tree):
        """Test a paper parameter changed in the file falls back to default."""
        scenario_tree['gfc_defaults']['controller']['vsg'] = {'J': 10.0}
        _, provenance = resolve_tree(scenario_tree)
        assert provenance['gfcs.gfc1.controller.vsg.J'] == DEFAULT

    def test_unknown_override(self, scenario_tree):
        """Test a misspelt override names the key."""
        with pytest.raises(ConfigurationError) as exc:
            resolve_tree(scenario_tree, ['gfc1.controller.alpah=1'])
        assert exc.value.key == 'gfcs.gfc1.controller.alpah'

    def test_malformed_override(self, scenario_tree):
        """Test an override without '=' is rejected."""
        with pytest.raises(ConfigurationError, match='key=value'):
            resolve_tree(scenario_tree, ['gfc1.controller.alpha'])

    def test_unknown_top_level_key(self, scenario_tree):
        """Test unknown keys are rejected."""
        scenario_tree['simulaton'] = {}
        with pytest.raises(ConfigurationError, match="Unknown scenario key 'simulaton'"):
            resolve_tree(scenario_tree)

    def test_unknown_nested_key(self, scenario_tree):
        """Test unknown keys inside a section are rejected."""
        scenario_tree['simulation']['dtt'] = 1e-5
        with pytest.raises(ConfigurationError, match='simulation.dtt'):
            resolve_tree(scenario_tree)

    def test_dangling_converter(self, scenario_tree):
        """Test settings for a converter absent from the network are rejected."""
        scenario_tree['gfcs'] = {'gfc9': {'controller': {'alpha': 0.2}}}
        with pytest.raises(ConfigurationError, match="'gfc9' is not attached"):
            resolve_tree(scenario_tree)

    def test_event_defaults(self, scenario_tree):
        """Test p_before defaults to the load size and q_after to unchanged."""
        del scenario_tree['events'][0]['p_before']
        tree, _ = resolve_tree(scenario_tree)
        assert tree['events'][0]['p_before'] == 0.3
        assert tree['events'][0]['q_after'] is None

    def test_comments_ignored(self, scenario_tree):
        """Test underscore keys are stripped."""
        scenario_tree['_comment'] = 'ignored'
        tree, _ = resolve_tree(scenario_tree)
        assert '_comment' not in tree


class TestBuildScenario:
    """Tests for validation and unit conversion."""

    def test_units(self, scenario_tree):
        """Test reactances and susceptances become inductances and capacitances."""
        tree, _ = resolve_tree(scenario_tree)
        scenario = build_scenario(tree)
        gfc = scenario.gfcs[0]
        assert gfc.bus == '2'
        assert gfc.converter.l_f == pytest.approx(0.1 / OMEGA_BASE)
        assert gfc.converter.c_f == pytest.approx(0.05 / OMEGA_BASE)
        assert gfc.controller.setpoints.v_dc_ref == 2.5
        assert isinstance(gfc.controller.kind, Vsg)
        assert scenario.events[0].p_after == 0.35

    def test_vsg_power_base_follows_bases(self, scenario_tree):
        """Test the swing law's power base is the scenario's apparent-power base."""
        tree, _ = resolve_tree(scenario_tree)
        assert build_scenario(tree).gfcs[0].controller.kind.power_base == 1e8
        tree, _ = resolve_tree(scenario_tree, ['bases.s_base_va=5e7'])
        assert build_scenario(tree).gfcs[0].controller.kind.power_base == 5e7

    @pytest.mark.parametrize('override,key', [
        ('gfc1.controller.alpha=1.5', 'gfcs.gfc1.controller.alpha'),
        ('simulation.dt=0', 'simulation.dt'),
        ('simulation.collapse_threshold=1.0', 'simulation.collapse_threshold'),
        ('gfc1.controller.kind="pll"', 'gfcs.gfc1.controller.kind'),
        ('gfc1.converter.i_dc_max=-1', 'gfcs.gfc1.converter.i_dc_max'),
        ('events.0.p_after=-0.1', 'events.0.p_after'),
        ('bases.f_base_hz=60', 'bases.f_base_hz'),
    ])
    def test_invalid_values(self, scenario_tree, override, key):
        """Test each invalid value names its key."""
        tree, _ = resolve_tree(scenario_tree, [override])
        with pytest.raises(ConfigurationError) as exc:
            build_scenario(tree)
        assert exc.value.key == key

    def test_event_bus_without_load(self, scenario_tree):
        """Test a step at a bus without a load is rejected."""
        scenario_tree['events'][0]['bus'] = '1'
        tree, _ = resolve_tree(scenario_tree)
        with pytest.raises(ConfigurationError, match='exactly one load'):
            build_scenario(tree)

    def test_events_sorted(self, scenario_tree):
        """Test events are applied in time order."""
        scenario_tree['events'].insert(0, {'t_event': 0.008, 'bus': '2', 'p_before': 0.35, 'p_after': 0.3})
        tree, _ = resolve_tree(scenario_tree)
        assert [e.t_event for e in build_scenario(tree).events] == [0.005, 0.008]


class TestResolvedRoundTrip:
    """Tests for resolved.json as a loadable scenario."""

    def test_reload_is_equivalent(self, scenario_file, tmp_path):
        """Test the resolved document resolves to itself with the same tags."""
        resolved = resolve_scenario(scenario_file, ['gfc1.controller.alpha=0.7'])
        path = tmp_path / 'resolved.json'
        path.write_text(json.dumps(resolved.document(), indent=2), encoding='utf-8')
        again = resolve_scenario(path)
        assert again.tree == resolved.tree
        assert again.provenance == resolved.provenance
        assert again.provenance['gfcs.gfc1.controller.alpha'] == OVERRIDE


class TestShippedScenarios:
    """Tests that every shipped scenario parses."""

    @pytest.mark.parametrize('name', sorted(SHIPPED))
    def test_parses(self, scenario_dir, name):
        """Test controller kind, alpha and the load step of each scenario."""
        kind, alpha, p_after = SHIPPED[name]
        scenario = parse_scenario(scenario_dir / f"{name}.json")
        assert scenario.name == name
        assert scenario.t_end == 10.0
        assert [g.name for g in scenario.gfcs] == ['gfc1', 'gfc2']
        for gfc in scenario.gfcs:
            assert isinstance(gfc.controller.kind, kind)
            assert gfc.controller.alpha == alpha
        event = scenario.events[0]
        assert (event.t_event, event.bus, event.p_after) == (1.0, '5', p_after)

    def test_collapse_case_tags(self, scenario_dir):
        """Test the load step and controller choice of the collapse case are tagged paper."""
        resolved = resolve_scenario(scenario_dir / 'ieee9_vsg_collapse.json')
        assert resolved.provenance['events.0.p_after'] == PAPER
        assert resolved.provenance['gfcs.gfc2.controller.alpha'] == PAPER
        assert resolved.provenance['simulation.dt'] == DEFAULT

    def test_ieee9_counts(self, scenario_dir):
        """Test the nine-bus network behind the shipped scenarios."""
        scenario = parse_scenario(scenario_dir / 'ieee9_vsg_feedback.json')
        assert len(scenario.network.buses) == 9
        assert len(scenario.network.machines) == 1
