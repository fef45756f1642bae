"""
Unit tests for assembly, initialization, RK4 and the run loop.
"""
import dataclasses
import math

import numpy as np
import pytest

from config import OMEGA_BASE
from core.controllers import Dvoc, InnerLoopConfig, OuterControllerConfig
from core.engine import (
    GFC_STATES,
    STATUS_COLLAPSED,
    STATUS_COMPLETED,
    STATUS_FAULT,
    StateLayout,
    WaveformLog,
    assemble,
    rk4_step,
    run,
)
from core.initialization import bus_admittance, frequency_residual, solve_operating_point
from core.network import CompiledNetwork, LoadStepEvent
from utils.errors import ConfigurationError, IntegrationFault
from utils.scenario_loader import parse_scenario


class TestAssemble:
    """Tests for compiling a scenario into a flat system."""

    def test_state_count_closed_form(self, two_bus_scenario):
        """Test the layout size matches 1 + 2 buses + 2 branches + 2 loads + 4 sm + 13 gfc."""
        system = assemble(two_bus_scenario)
        assert len(system.layout) == StateLayout.expected_size(2, 1, 1, 1, 1) == 26
        assert system.layout.names[0] == 'theta_ref'
        assert system.layout.names[-len(GFC_STATES):] == [f"gfc1.{s}" for s in GFC_STATES]

    def test_channels(self, two_bus_scenario):
        """Test every device logs its channels."""
        names = assemble(two_bus_scenario).channel_names
        for channel in ('gfc1.v_dc', 'gfc1.i_dc', 'gfc1.i_tau', 'gfc1.omega', 'gfc1.p', 'gfc1.q',
                        'gfc1.v_mag', 'sm1.omega', 'bus1.v_mag', 'bus2.v_mag', 'network.p_load'):
            assert channel in names

    def test_unknown_converter_bus(self, two_bus_scenario):
        """Test a converter at an unknown bus is rejected."""
        gfc = dataclasses.replace(two_bus_scenario.gfcs[0], bus='9')
        with pytest.raises(ConfigurationError, match="unknown bus '9'"):
            assemble(dataclasses.replace(two_bus_scenario, gfcs=[gfc]))

    def test_event_bus_without_load(self, two_bus_scenario):
        """Test an event at a bus without a load is rejected at assembly."""
        scenario = dataclasses.replace(two_bus_scenario, events=[LoadStepEvent(0.01, '1', 0.0, 0.1)])
        with pytest.raises(ConfigurationError, match='exactly one load'):
            assemble(scenario)

    def test_invalid_step(self, two_bus_scenario):
        """Test a non-positive dt is rejected."""
        with pytest.raises(ConfigurationError):
            assemble(dataclasses.replace(two_bus_scenario, dt=0.0))


class TestInitialization:
    """Tests for the steady-state operating point."""

    def test_power_flow_residual(self, two_bus_scenario):
        """Test the solved point satisfies the network equations."""
        system = assemble(two_bus_scenario)
        op = solve_operating_point(system.net, two_bus_scenario.gfcs, system.graph.machines)
        assert op.residual < 1e-9
        point = op.gfcs['gfc1']
        assert abs(point.v) == pytest.approx(1.0, abs=1e-9)
        assert point.p == pytest.approx(0.25, abs=1e-9)
        assert point.v_dc == pytest.approx(2.5, rel=1e-2)

    def test_derivative_vanishes_at_operating_point(self, two_bus_scenario):
        """Test the initial state is an equilibrium apart from rotating quantities."""
        system = assemble(two_bus_scenario)
        x = system.initial_state()
        d = system.derivative(0.0, x)
        b = system.gfcs[0].offset
        names = system.layout.names
        for k in range(b, b + len(GFC_STATES)):
            if names[k].endswith(('.i_s_a', '.i_s_b', '.theta')):
                continue
            assert abs(d[k]) < 1e-6, names[k]
        assert d[b + 4] == pytest.approx(OMEGA_BASE, rel=1e-9)

    def test_admittance_is_symmetric(self, two_bus_network):
        """Test the bus admittance matrix of a network without off-nominal ratios is symmetric."""
        y = bus_admittance(CompiledNetwork(two_bus_network, {'2': 1e-4}))
        np.testing.assert_allclose(y, y.T)

    def test_frequency_residual_vsg(self, vsg_controller):
        """Test a VSG rests at rated frequency only at p*."""
        assert frequency_residual(vsg_controller, 0.3, 2.4, 1.0) == pytest.approx(0.05, abs=1e-15)
        assert frequency_residual(vsg_controller, 0.25, 2.4, 1.0) == 0.0

    def test_frequency_residual_pure_dc_feedback(self, droop_controller):
        """Test alpha = 0 leaves only the DC voltage error."""
        cfg = dataclasses.replace(droop_controller, alpha=0.0)
        assert frequency_residual(cfg, 0.7, 2.4, 1.0) == pytest.approx(2.4 / 2.5 - 1.0, abs=1e-15)

    def test_frequency_residual_conventional_droop(self, droop_controller):
        """Test alpha = 1 gives the droop frequency error relative to omega*."""
        cfg = dataclasses.replace(droop_controller, alpha=1.0)
        expected = cfg.kind.d_omega * (cfg.setpoints.p_ref - 0.4) / OMEGA_BASE
        assert frequency_residual(cfg, 0.4, 2.0, 1.0) == pytest.approx(expected, rel=1e-9)

    def test_frequency_residual_dvoc_magnitude(self, dvoc_controller):
        """Test the dVOC power term is scaled by the terminal magnitude."""
        cfg = dataclasses.replace(dvoc_controller, alpha=1.0)
        expected = cfg.kind.eta * (0.25 - 0.3 / 0.81) / OMEGA_BASE
        assert frequency_residual(cfg, 0.3, 2.5, 0.9) == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize('name', [
        'ieee9_vsg_small_step', 'ieee9_vsg_collapse', 'ieee9_vsg_ac_limit',
        'ieee9_vsg_feedback', 'ieee9_droop_feedback', 'ieee9_dvoc_feedback',
    ])
    def test_shipped_scenarios_initialize(self, scenario_dir, name):
        """Test every shipped scenario has a steady operating point with v_dc near its setpoint."""
        scenario = parse_scenario(scenario_dir / f"{name}.json")
        system = assemble(scenario)
        op = solve_operating_point(system.net, scenario.gfcs, system.graph.machines)
        assert op.residual < 1e-9
        for point in op.gfcs.values():
            assert point.v_dc == pytest.approx(2.5, rel=1e-3)


class TestFusedDerivative:
    """The per-converter kernel against the composed device operations."""

    @staticmethod
    def _perturbed(system, seed, v_dc=None):
        x = system.initial_state()
        rng = np.random.default_rng(seed)
        x = x + 0.05 * rng.normal(size=x.shape)
        if v_dc is not None:
            x[system.gfcs[0].offset] = v_dc
        return x

    def _assert_same(self, scenario, v_dc=None):
        system = assemble(scenario)
        for seed in range(5):
            x = self._perturbed(system, seed, v_dc)
            composed, _ = system.evaluate(x)
            np.testing.assert_allclose(system.derivative(0.0, x), composed, rtol=1e-10, atol=1e-8)

    @pytest.mark.parametrize('fixture', ['droop_controller', 'vsg_controller', 'dvoc_controller'])
    def test_each_kind(self, request, fixture, two_bus_network, scenario_factory):
        """Test both paths agree off equilibrium for every controller kind."""
        controller = request.getfixturevalue(fixture)
        self._assert_same(scenario_factory(two_bus_network, controller))

    def test_feedback_off_and_literal_phase_law(self, two_bus_network, dvoc_controller, scenario_factory):
        """Test both paths agree without DC feedback and with the literal dVOC phase law."""
        plain = dataclasses.replace(dvoc_controller, dc_feedback=False)
        self._assert_same(scenario_factory(two_bus_network, plain))
        literal = dataclasses.replace(dvoc_controller, kind=Dvoc(phase_law='paper_literal'))
        self._assert_same(scenario_factory(two_bus_network, literal))

    def test_limiters_active(self, two_bus_network, vsg_controller, scenario_factory):
        """Test both paths agree with the AC limit engaged and the modulator saturated."""
        loop = InnerLoopConfig(ac_limit=True, i_ac_max=0.1)
        scenario = scenario_factory(two_bus_network, vsg_controller, inner_loop=loop)
        self._assert_same(scenario)
        self._assert_same(scenario, v_dc=0.6)


class TestRk4:
    """Tests for the fixed-step integrator."""

    @staticmethod
    def _error(dt):
        x = np.array([1.0])
        for k in range(int(round(1.0 / dt))):
            x = rk4_step(lambda t, y: -y, x, k * dt, dt)
        return abs(x[0] - math.exp(-1.0))

    def test_fourth_order_convergence(self):
        """Test the global error drops 16x per step halving on x' = -x."""
        errors = [self._error(dt) for dt in (0.1, 0.05, 0.025)]
        for coarse, fine in zip(errors, errors[1:]):
            assert 16.0 * 0.8 <= coarse / fine <= 16.0 * 1.2

    def test_fault_on_non_finite(self):
        """Test a non-finite derivative raises IntegrationFault with its index."""
        with pytest.raises(IntegrationFault) as exc:
            rk4_step(lambda t, y: np.array([0.0, np.inf]), np.zeros(2), 0.0, 1e-3)
        assert exc.value.index == 1

    def test_rejects_bad_dt(self):
        """Test a non-positive dt is rejected."""
        with pytest.raises(ValueError):
            rk4_step(lambda t, y: y, np.zeros(1), 0.0, -1.0)


class TestRun:
    """Tests for the run loop on the two-bus system."""

    def test_equilibrium_is_preserved(self, two_bus_scenario):
        """Test channels stay constant without events."""
        result = run(two_bus_scenario)
        assert result.status == STATUS_COMPLETED
        log = result.log
        for name in ('gfc1.v_dc', 'gfc1.omega', 'gfc1.p', 'gfc1.v_mag', 'sm1.omega', 'bus1.v_mag'):
            assert np.ptp(log[name]) < 1e-6, name

    def test_log_shape(self, two_bus_scenario):
        """Test time is strictly increasing and every channel has one value per sample."""
        log, final_state = run(two_bus_scenario)
        assert np.all(np.diff(log.time) > 0)
        assert log.time[0] == 0.0
        assert log.time[-1] == pytest.approx(two_bus_scenario.t_end)
        assert all(len(values) == len(log) for values in log.channels.values())
        assert len(final_state) == 26

    def test_switch_balance(self, two_bus_scenario):
        """Test the switch power identity holds at every logged sample."""
        log = run(two_bus_scenario).log
        assert np.max(np.abs(log['gfc1.switch_balance'])) < 1e-12

    def test_load_step_moves_power(self, two_bus_network, droop_controller, scenario_factory):
        """Test a load step at the converter bus raises converter power."""
        scenario = scenario_factory(two_bus_network, droop_controller,
                                    events=[LoadStepEvent(0.01, '2', 0.3, 0.5)], t_end=0.04)
        log = run(scenario).log
        before = log['gfc1.p'][log.time <= 0.01][-1]
        assert log['gfc1.p'][-1] > before
        assert scenario.network.loads[0].p == 0.3

    @pytest.mark.parametrize('fixture', ['vsg_controller', 'droop_controller'])
    def test_small_load_step_is_picked_up(self, request, fixture, two_bus_network, scenario_factory):
        """Test a 0.05 p.u. load step at the converter bus raises converter power within 90 ms."""
        controller = request.getfixturevalue(fixture)
        scenario = scenario_factory(two_bus_network, controller,
                                    events=[LoadStepEvent(0.01, '2', 0.3, 0.35)], t_end=0.1)
        result = run(scenario)
        log = result.log
        assert result.status == STATUS_COMPLETED
        before = log['gfc1.p'][log.time < 0.009][-1]
        after = log['gfc1.p'][log.time > 0.011]
        assert np.mean(after) > before
        assert after[-1] > before + 0.02
        assert np.min(log['gfc1.v_dc']) > 0.95

    def test_deterministic(self, two_bus_scenario):
        """Test two runs are bit-identical."""
        a, b = run(two_bus_scenario).log, run(two_bus_scenario).log
        for name in a.channel_names:
            assert np.array_equal(a[name], b[name])

    def test_dvoc_runs(self, two_bus_network, setpoints, scenario_factory):
        """Test the dVOC converter initializes at rest."""
        controller = OuterControllerConfig(kind=Dvoc(), alpha=0.5, setpoints=setpoints)
        result = run(scenario_factory(two_bus_network, controller))
        assert result.status == STATUS_COMPLETED
        assert np.ptp(result.log['gfc1.omega']) < 1e-6

    def test_early_stop_on_collapse(self, two_bus_scenario):
        """Test a DC link driven below the floor stops the run with status collapsed."""
        system = assemble(two_bus_scenario)
        x0 = system.initial_state()
        b = system.gfcs[0].offset
        system.initial_state = lambda: np.where(np.arange(len(x0)) == b, 0.01, x0)
        result = run(two_bus_scenario, system)
        assert result.status == STATUS_COLLAPSED
        assert 'gfc1' in result.message
        assert result.log.time[-1] < two_bus_scenario.t_end

    def test_fault_status(self, two_bus_scenario):
        """Test a non-finite state ends the run with status fault."""
        system = assemble(two_bus_scenario)
        x0 = system.initial_state()
        system.initial_state = lambda: np.where(np.arange(len(x0)) == 1, np.nan, x0)
        result = run(two_bus_scenario, system)
        assert result.status == STATUS_FAULT
        assert 'Integration fault' in result.message


class TestWaveformLog:
    """Tests for the log container."""

    def test_frame_round_trip(self):
        """Test to_frame/from_frame keep time and channels."""
        log = WaveformLog(np.array([0.0, 0.1]), {'gfc1.v_dc': np.array([1.0, 0.9])})
        back = WaveformLog.from_frame(log.to_frame())
        assert list(log.to_frame().columns) == ['t_s', 'gfc1.v_dc']
        assert np.array_equal(back['gfc1.v_dc'], log['gfc1.v_dc'])

    def test_devices(self):
        """Test devices() lists the owners of a quantity."""
        log = WaveformLog(np.zeros(1), {'gfc1.v_dc': np.zeros(1), 'gfc2.v_dc': np.zeros(1), 'sm1.omega': np.zeros(1)})
        assert log.devices('v_dc') == ['gfc1', 'gfc2']
