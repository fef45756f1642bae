"""
Flat-state EMT engine.

``assemble`` compiles a Scenario into a FlatSystem: a documented state layout,
a constant matrix for the linear network part and per-device callbacks for the
converters, their controllers and the machines. ``run`` initializes the system
at its rated-frequency operating point, pre-rolls it, then integrates with
fixed-step RK4 while applying load events at step boundaries and logging every
``log_decimation`` steps.

State layout (alpha/beta pairs interleaved)::

    theta_ref
    bus<id>.v_a, bus<id>.v_b                      per bus, sorted by id
    <element>.i_a, <element>.i_b                  per line, then per transformer
    <load>.i_a, <load>.i_b                        inductive load branch
    <sm>.i_a, <sm>.i_b, <sm>.delta, <sm>.omega_m  per machine
    <gfc>.v_dc, i_s_a, i_s_b, i_tau, theta, omega, v_mag, p_f, q_f,
          xv_d, xv_q, xi_d, xi_q                  per converter

Size: 1 + 2 n_bus + 2 n_branch + 2 n_load + 4 n_sm + 13 n_gfc.
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import (
    DEFAULT_COLLAPSE_THRESHOLD,
    DEFAULT_DT,
    DEFAULT_LOG_DECIMATION,
    DEFAULT_PREROLL,
    DEFAULT_SETTLING_BAND,
    DEFAULT_T_END,
    DVOC_MIN_MAGNITUDE,
    F_BASE_HZ,
    MODULATION_MIN_VDC,
    OMEGA_BASE,
    S_BASE_VA,
    TIME_COLUMN,
    V_BASE_V,
    VDC_FLOOR,
)
from core.controllers import (
    Droop,
    Dvoc,
    InnerLoopConfig,
    InnerLoopMeasurements,
    InnerLoopState,
    OuterControllerConfig,
    OuterControllerState,
    Vsg,
    droop_update,
    dvoc_update,
    inner_loops,
    instantaneous_power,
    power_filter_derivative,
    reference_voltage,
    vsg_update,
)
from core.converter import (
    ConverterParams,
    ConverterState,
    converter_derivatives,
    dc_demand_derivative,
    raw_dc_demand,
    saturate_dc_current,
    switch_power_mismatch,
)
from core.initialization import phasor_dq, solve_operating_point
from core.network import (
    CompiledNetwork,
    LoadStepEvent,
    NetworkGraph,
    SyncMachine,
    apply_event,
    sm_derivatives,
)
from utils.errors import ConfigurationError, ControllerFault, IntegrationFault

logger = logging.getLogger(__name__)

GFC_STATES = ('v_dc', 'i_s_a', 'i_s_b', 'i_tau', 'theta', 'omega', 'v_mag',
              'p_f', 'q_f', 'xv_d', 'xv_q', 'xi_d', 'xi_q')
SM_STATES = ('i_a', 'i_b', 'delta', 'omega_m')
GFC_CHANNELS = ('v_dc', 'i_dc', 'i_tau', 'omega', 'p', 'q', 'v_mag', 'switch_balance')
SM_CHANNELS = ('omega', 'p', 'delta')

STATUS_COMPLETED = 'completed'
STATUS_COLLAPSED = 'collapsed'
STATUS_FAULT = 'fault'


@dataclass(frozen=True)
class Bases:
    s_base_va: float = S_BASE_VA
    v_base_v: float = V_BASE_V
    f_base_hz: float = F_BASE_HZ

    @property
    def z_base_ohm(self) -> float:
        return self.v_base_v ** 2 / self.s_base_va


@dataclass
class GfcConfig:
    name: str
    bus: str
    converter: ConverterParams
    controller: OuterControllerConfig
    inner_loop: InnerLoopConfig


@dataclass
class Scenario:
    name: str
    network: NetworkGraph
    gfcs: List[GfcConfig]
    events: List[LoadStepEvent] = field(default_factory=list)
    t_end: float = DEFAULT_T_END
    dt: float = DEFAULT_DT
    log_decimation: int = DEFAULT_LOG_DECIMATION
    bases: Bases = field(default_factory=Bases)
    preroll: float = DEFAULT_PREROLL
    collapse_threshold: float = DEFAULT_COLLAPSE_THRESHOLD
    settling_band: float = DEFAULT_SETTLING_BAND
    description: str = ''


@dataclass
class WaveformLog:
    """Time-indexed channels of one run. Channels are keyed ``<device>.<quantity>``."""

    time: np.ndarray
    channels: Dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.time)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    @property
    def channel_names(self) -> List[str]:
        return list(self.channels)

    def devices(self, suffix: str) -> List[str]:
        """Devices that log a given quantity, e.g. ``devices('v_dc')``."""
        return [name.rsplit('.', 1)[0] for name in self.channels if name.endswith('.' + suffix)]

    def to_frame(self) -> pd.DataFrame:
        data = {TIME_COLUMN: self.time}
        data.update(self.channels)
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'WaveformLog':
        if TIME_COLUMN not in frame.columns:
            raise ValueError(f"Waveform table has no '{TIME_COLUMN}' column")
        channels = {name: frame[name].to_numpy(dtype=float) for name in frame.columns if name != TIME_COLUMN}
        return cls(time=frame[TIME_COLUMN].to_numpy(dtype=float), channels=channels)


class _LogBuilder:
    def __init__(self, names: Sequence[str]):
        self.names = list(names)
        self.times: List[float] = []
        self.rows: List[List[float]] = []

    def append(self, t: float, row: List[float]) -> None:
        self.times.append(t)
        self.rows.append(row)

    def build(self) -> WaveformLog:
        data = np.array(self.rows, dtype=float).reshape(len(self.rows), len(self.names))
        channels = {name: data[:, k].copy() for k, name in enumerate(self.names)}
        return WaveformLog(time=np.array(self.times, dtype=float), channels=channels)


@dataclass
class RunResult:
    log: WaveformLog
    final_state: np.ndarray
    status: str = STATUS_COMPLETED
    message: str = ''
    state_names: List[str] = field(default_factory=list)

    def __iter__(self) -> Iterator:
        yield self.log
        yield self.final_state


class StateLayout:
    def __init__(self):
        self.names: List[str] = []
        self.index: Dict[str, int] = {}

    def add(self, name: str) -> int:
        if name in self.index:
            raise ConfigurationError(f"Duplicate state '{name}'", key=name)
        self.index[name] = len(self.names)
        self.names.append(name)
        return self.index[name]

    def __len__(self) -> int:
        return len(self.names)

    @staticmethod
    def expected_size(n_bus: int, n_branch: int, n_load: int, n_sm: int, n_gfc: int) -> int:
        return 1 + 2 * n_bus + 2 * n_branch + 2 * n_load + len(SM_STATES) * n_sm + len(GFC_STATES) * n_gfc


class GfcSignals(NamedTuple):
    v_dc: float
    i_dc: float
    i_tau: float
    omega: float
    p: float
    q: float
    v_mag: float
    switch_balance: float


class _GfcSlot:
    __slots__ = ('cfg', 'offset', 'bus_col', 'outer', 'loops', 'kind')

    def __init__(self, cfg: GfcConfig, offset: int, bus_col: int):
        self.cfg = cfg
        self.offset = offset
        self.bus_col = bus_col
        self.outer = OuterControllerState()
        self.loops = InnerLoopState()
        self.kind = type(cfg.controller.kind)


class _MachineSlot:
    __slots__ = ('sm', 'offset', 'bus_col')

    def __init__(self, sm: SyncMachine, offset: int, bus_col: int):
        self.sm = sm
        self.offset = offset
        self.bus_col = bus_col

    def write(self, xs: List[float], d: List[float], theta_ref: float) -> None:
        """Same equations as :func:`core.network.sm_derivatives`, inlined."""
        sm = self.sm
        b = self.offset
        vb = self.bus_col
        i_a = xs[b]
        i_b = xs[b + 1]
        angle = theta_ref + xs[b + 2]
        omega_m = xs[b + 3]
        e_a = sm.e_mag * math.cos(angle)
        e_b = sm.e_mag * math.sin(angle)
        speed_dev = (omega_m - OMEGA_BASE) / OMEGA_BASE
        p_mech = sm.p_set - speed_dev / sm.governor_droop
        p_elec = e_a * i_a + e_b * i_b
        l_t = sm.l_t
        d[b] = (e_a - xs[vb] - sm.r_s * i_a) / l_t
        d[b + 1] = (e_b - xs[vb + 1] - sm.r_s * i_b) / l_t
        d[b + 2] = omega_m - OMEGA_BASE
        d[b + 3] = OMEGA_BASE / (2.0 * sm.inertia_h) * (p_mech - p_elec - sm.d_damp * speed_dev)


_DROOP, _VSG, _DVOC = 0, 1, 2


class _GfcKernel:
    """
    Converter, outer controller and inner cascade of one GFC fused into scalar
    arithmetic over precomputed constants.

    Evaluates the same equations as the composed operations in
    :mod:`core.converter` and :mod:`core.controllers`; ``FlatSystem.evaluate``
    keeps the composed path for logging and as the reference.
    """

    __slots__ = (
        'b', 'vb', 'kind', 'feedback', 'alpha', 'omega_ref', 'p_ref', 'q_ref', 'v_ref', 'v_ref_sq',
        'dc_gain', 'd_omega', 'swing_gain', 'damping', 'eta', 'eta_mu', 'literal',
        'omega_f', 'c_dc', 'g_dc', 'l_f', 'c_f', 'r_f', 'i_dc_max', 'k_dc', 'v_dc_ref',
        'feedforward', 'tau_dc', 'kp_v', 'ki_v', 'kp_i', 'ki_i', 'ac_limit', 'i_ac_max',
        'decoupling', 'limit',
    )

    def __init__(self, cfg: GfcConfig, offset: int, bus_col: int):
        ctrl = cfg.controller
        sp = ctrl.setpoints
        params = cfg.converter
        loop = cfg.inner_loop
        kind = ctrl.kind
        self.b = offset
        self.vb = bus_col
        self.kind = _DROOP if isinstance(kind, Droop) else _DVOC if isinstance(kind, Dvoc) else _VSG
        self.feedback = ctrl.dc_feedback
        self.alpha = ctrl.alpha
        self.omega_ref = sp.omega_ref
        self.p_ref = sp.p_ref
        self.q_ref = sp.q_ref
        self.v_ref = sp.v_ref
        self.v_ref_sq = sp.v_ref * sp.v_ref
        # rad/s per unit of v_dc (droop, dVOC) or of v_dc_dot (VSG)
        self.dc_gain = (1.0 - ctrl.alpha) * sp.omega_ref / sp.v_dc_ref
        self.d_omega = kind.d_omega if isinstance(kind, Droop) else 0.0
        if isinstance(kind, Vsg):
            self.swing_gain = kind.power_base / (kind.J * sp.omega_ref)
            self.damping = kind.D_p / kind.J
        else:
            self.swing_gain = self.damping = 0.0
        self.eta = kind.eta if isinstance(kind, Dvoc) else 0.0
        self.eta_mu = kind.eta * kind.mu / self.v_ref_sq if isinstance(kind, Dvoc) else 0.0
        self.literal = isinstance(kind, Dvoc) and kind.phase_law == 'paper_literal'
        self.omega_f = ctrl.omega_f
        self.c_dc = params.c_dc
        self.g_dc = params.g_dc
        self.l_f = params.l_f
        self.c_f = params.c_f
        self.r_f = params.r_f
        self.i_dc_max = params.i_dc_max
        self.k_dc = params.k_dc
        self.v_dc_ref = params.v_dc_ref
        self.feedforward = params.g_dc * params.v_dc_ref
        self.tau_dc = params.tau_dc
        self.kp_v = loop.kp_v
        self.ki_v = loop.ki_v
        self.kp_i = loop.kp_i
        self.ki_i = loop.ki_i
        self.ac_limit = loop.ac_limit
        self.i_ac_max = loop.i_ac_max
        self.decoupling = loop.decoupling
        self.limit = loop.integrator_limit

    def write(self, xs: List[float], d: List[float]) -> None:
        b = self.b
        vb = self.vb
        v_a = xs[vb]
        v_b = xs[vb + 1]
        v_dc = xs[b]
        is_a = xs[b + 1]
        is_b = xs[b + 2]
        theta = xs[b + 4]
        p_f = xs[b + 7]
        q_f = xs[b + 8]
        c_f = self.c_f
        ig_a = is_a - c_f * d[vb]
        ig_b = is_b - c_f * d[vb + 1]
        p = v_a * ig_a + v_b * ig_b
        q = v_b * ig_a - v_a * ig_b

        raw = self.k_dc * (self.v_dc_ref - v_dc) + p_f / self.v_dc_ref + self.feedforward
        if self.tau_dc > 0.0:
            i_tau = xs[b + 3]
            d[b + 3] = (raw - i_tau) / self.tau_dc
        else:
            i_tau = raw
            d[b + 3] = 0.0
        i_max = self.i_dc_max
        if abs(i_tau) < i_max:
            i_dc = i_tau
        else:
            i_dc = math.copysign(i_max, i_tau) if i_tau != 0.0 else 0.0

        kind = self.kind
        w_ref = self.omega_ref
        magnitude = self.v_ref
        d[b + 5] = 0.0
        d[b + 6] = 0.0
        if kind == _DROOP:
            omega = w_ref + self.d_omega * (self.p_ref - p_f)
            if self.feedback:
                omega = self.alpha * omega + self.dc_gain * v_dc
            d[b + 4] = omega
        elif kind == _DVOC:
            magnitude = xs[b + 6]
            if magnitude <= DVOC_MIN_MAGNITUDE:
                raise ControllerFault(f"dVOC voltage magnitude {magnitude:.3e} is degenerate")
            v_sq = magnitude * magnitude
            p_term = self.eta * (self.p_ref / self.v_ref_sq - p_f / v_sq)
            if not self.feedback:
                omega = w_ref + p_term
            elif self.literal:
                omega = w_ref + self.alpha * p_term + self.dc_gain * v_dc
            else:
                omega = self.alpha * (w_ref + p_term) + self.dc_gain * v_dc
            d[b + 4] = omega
            d[b + 6] = (self.eta * (self.q_ref / self.v_ref_sq - q_f / v_sq) * magnitude
                        + self.eta_mu * (self.v_ref_sq - v_sq) * magnitude)
        else:
            omega = xs[b + 5]
            d[b + 4] = omega

        c = math.cos(theta)
        s = math.sin(theta)
        v_d = v_a * c + v_b * s
        v_q = -v_a * s + v_b * c
        is_d = is_a * c + is_b * s
        is_q = -is_a * s + is_b * c
        ig_d = ig_a * c + ig_b * s
        ig_q = -ig_a * s + ig_b * c
        if self.decoupling:
            wc = omega * c_f
            wl = omega * self.l_f
        else:
            wc = wl = 0.0

        ev_d = magnitude - v_d
        ev_q = -v_q
        xv_d = xs[b + 9]
        xv_q = xs[b + 10]
        ir_d = self.kp_v * ev_d + xv_d + ig_d - wc * v_q
        ir_q = self.kp_v * ev_q + xv_q + ig_q + wc * v_d
        limiting = False
        if self.ac_limit and math.hypot(is_d, is_q) > self.i_ac_max:
            norm = math.hypot(ir_d, ir_q)
            if norm == 0.0:
                limited_d = limited_q = 0.0
            else:
                gamma = self.i_ac_max / norm
                limited_d = gamma * ir_d
                limited_q = gamma * ir_q
            limiting = limited_d != ir_d or limited_q != ir_q
            ir_d = limited_d
            ir_q = limited_q

        ei_d = ir_d - is_d
        ei_q = ir_q - is_q
        xi_d = xs[b + 11]
        xi_q = xs[b + 12]
        vs_d = self.kp_i * ei_d + xi_d + v_d - wl * is_q
        vs_q = self.kp_i * ei_q + xi_q + v_q + wl * is_d

        scale = 2.0 / (v_dc if v_dc > MODULATION_MIN_VDC else MODULATION_MIN_VDC)
        md = scale * vs_d
        mq = scale * vs_q
        m_a = md * c - mq * s
        m_b = md * s + mq * c
        m_norm = math.hypot(m_a, m_b)
        saturated = m_norm > 1.0
        if saturated:
            m_a /= m_norm
            m_b /= m_norm

        limit = self.limit
        rate = 0.0 if limiting and ev_d * ir_d > 0.0 else self.ki_v * ev_d
        d[b + 9] = 0.0 if (xv_d >= limit and rate > 0.0) or (xv_d <= -limit and rate < 0.0) else rate
        rate = 0.0 if limiting and ev_q * ir_q > 0.0 else self.ki_v * ev_q
        d[b + 10] = 0.0 if (xv_q >= limit and rate > 0.0) or (xv_q <= -limit and rate < 0.0) else rate
        rate = 0.0 if saturated and ei_d * vs_d > 0.0 else self.ki_i * ei_d
        d[b + 11] = 0.0 if (xi_d >= limit and rate > 0.0) or (xi_d <= -limit and rate < 0.0) else rate
        rate = 0.0 if saturated and ei_q * vs_q > 0.0 else self.ki_i * ei_q
        d[b + 12] = 0.0 if (xi_q >= limit and rate > 0.0) or (xi_q <= -limit and rate < 0.0) else rate

        half = 0.5 * v_dc
        i_x = 0.5 * (m_a * is_a + m_b * is_b)
        v_dc_dot = (i_dc - self.g_dc * v_dc - i_x) / self.c_dc
        d[b] = v_dc_dot
        d[b + 1] = (half * m_a - self.r_f * is_a - v_a) / self.l_f
        d[b + 2] = (half * m_b - self.r_f * is_b - v_b) / self.l_f
        if kind == _VSG:
            omega_dot = self.swing_gain * (self.p_ref - p_f) + self.damping * (w_ref - omega)
            if self.feedback:
                omega_dot = self.alpha * omega_dot + self.dc_gain * v_dc_dot
            d[b + 5] = omega_dot
        d[b + 7] = self.omega_f * (p - p_f)
        d[b + 8] = self.omega_f * (q - q_f)


class FlatSystem:
    """Assembled state-space system of one scenario. Owns a private copy of the network."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.graph = copy.deepcopy(scenario.network)
        self._check_references()

        extra = {g.bus: g.converter.c_f for g in scenario.gfcs}
        self.net = CompiledNetwork(self.graph, extra)
        layout = StateLayout()
        layout.add('theta_ref')
        self.bus_offset = len(layout)
        for bus_id in self.net.bus_ids:
            layout.add(f"bus{bus_id}.v_a")
            layout.add(f"bus{bus_id}.v_b")
        self.series_offset = len(layout)
        for name in self.net.series_names:
            layout.add(f"{name}.i_a")
            layout.add(f"{name}.i_b")
        self.load_offset = len(layout)
        for name in self.net.load_names:
            layout.add(f"{name}.i_a")
            layout.add(f"{name}.i_b")
        self.machines: List[_MachineSlot] = []
        for sm in self.graph.machines:
            offset = len(layout)
            for suffix in SM_STATES:
                layout.add(f"{sm.name}.{suffix}")
            self.machines.append(_MachineSlot(sm, offset, self._bus_col(sm.bus)))
        self.gfcs: List[_GfcSlot] = []
        for cfg in scenario.gfcs:
            offset = len(layout)
            for suffix in GFC_STATES:
                layout.add(f"{cfg.name}.{suffix}")
            self.gfcs.append(_GfcSlot(cfg, offset, self._bus_col(cfg.bus)))
        self.layout = layout
        self._kernels = [_GfcKernel(slot.cfg, slot.offset, slot.bus_col) for slot in self.gfcs]

        expected = StateLayout.expected_size(self.net.n_bus, self.net.n_series, self.net.n_load,
                                             len(self.machines), len(self.gfcs))
        assert len(layout) == expected, (len(layout), expected)
        self._build_matrix()
        self.channel_names = self._channel_names()
        logger.info("Assembled '%s': %d states, %d buses, %d converters",
                    scenario.name, len(layout), self.net.n_bus, len(self.gfcs))

    # -- assembly ---------------------------------------------------------

    def _check_references(self) -> None:
        names = set()
        for cfg in self.scenario.gfcs:
            if cfg.name in names:
                raise ConfigurationError(f"Duplicate converter '{cfg.name}'", key=f"gfcs.{cfg.name}")
            names.add(cfg.name)
            if cfg.bus not in self.graph.buses:
                raise ConfigurationError(f"Converter '{cfg.name}' references unknown bus '{cfg.bus}'",
                                         key=f"gfcs.{cfg.name}")
        for k, event in enumerate(self.scenario.events):
            bus = str(event.bus)
            if bus not in self.graph.buses:
                raise ConfigurationError(f"Event references unknown bus '{bus}'", key=f"events.{k}.bus")
            if len(self.graph.loads_at(bus)) != 1:
                raise ConfigurationError(f"Event bus '{bus}' must carry exactly one load",
                                         key=f"events.{k}.bus")

    def _bus_col(self, bus_id: str) -> int:
        return self.bus_offset + 2 * self.net.bus_index[bus_id]

    def _build_matrix(self) -> None:
        size = len(self.layout)
        a_net, b_net = self.net.state_matrices()
        lo = self.bus_offset
        hi = lo + a_net.shape[0]
        a = np.zeros((size, size))
        a[lo:hi, lo:hi] = a_net
        for slot in self.machines:
            col = slot.bus_col - lo
            a[lo:hi, slot.offset:slot.offset + 2] += b_net[:, col:col + 2]
        for slot in self.gfcs:
            col = slot.bus_col - lo
            i_s = slot.offset + 1
            a[lo:hi, i_s:i_s + 2] += b_net[:, col:col + 2]
        self._a = a

    def _channel_names(self) -> List[str]:
        names = []
        for slot in self.gfcs:
            names += [f"{slot.cfg.name}.{c}" for c in GFC_CHANNELS]
        for slot in self.machines:
            names += [f"{slot.sm.name}.{c}" for c in SM_CHANNELS]
        names += [f"bus{bus_id}.v_mag" for bus_id in self.net.bus_ids]
        names += ['network.p_load', 'network.p_loss']
        return names

    # -- dynamics ---------------------------------------------------------

    def derivative(self, t: float, x: np.ndarray) -> np.ndarray:
        """Right-hand side; independent of t."""
        d = (self._a @ x).tolist()
        xs = x.tolist()
        d[0] = OMEGA_BASE
        theta_ref = xs[0]
        for slot in self.machines:
            slot.write(xs, d, theta_ref)
        for kernel in self._kernels:
            kernel.write(xs, d)
        return np.array(d)

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, List[GfcSignals]]:
        """Right-hand side and converter signals through the composed device operations."""
        d = (self._a @ x).tolist()
        xs = x.tolist()
        d[0] = OMEGA_BASE
        theta_ref = xs[0]
        for slot in self.machines:
            b = slot.offset
            vb = slot.bus_col
            res = sm_derivatives(slot.sm, (xs[vb], xs[vb + 1]), OMEGA_BASE, (xs[b], xs[b + 1]),
                                 theta_ref, xs[b + 2], xs[b + 3])
            d[b], d[b + 1] = res.i_ab_dot
            d[b + 2] = res.delta_dot
            d[b + 3] = res.omega_dot
        signals = [self._gfc_terms(slot, xs, d) for slot in self.gfcs]
        return np.array(d), signals

    def _gfc_terms(self, slot: _GfcSlot, xs: List[float], d: List[float]) -> GfcSignals:
        cfg = slot.cfg
        params = cfg.converter
        ctrl = cfg.controller
        b = slot.offset
        vb = slot.bus_col

        v = (xs[vb], xs[vb + 1])
        v_dot = (d[vb], d[vb + 1])
        v_dc = xs[b]
        i_s = (xs[b + 1], xs[b + 2])
        outer = slot.outer
        outer.theta = xs[b + 4]
        outer.omega = xs[b + 5]
        outer.v_mag = xs[b + 6]
        p_f = xs[b + 7]
        q_f = xs[b + 8]
        loops = slot.loops
        loops.xv_dq = (xs[b + 9], xs[b + 10])
        loops.xi_dq = (xs[b + 11], xs[b + 12])

        i_grid = (i_s[0] - params.c_f * v_dot[0], i_s[1] - params.c_f * v_dot[1])
        p_inst, q_inst = instantaneous_power(v, i_grid)

        raw = raw_dc_demand(v_dc, p_f, params)
        if params.tau_dc > 0.0:
            i_tau = xs[b + 3]
            i_tau_dot = dc_demand_derivative(i_tau, raw, params.tau_dc)
        else:
            i_tau = raw
            i_tau_dot = 0.0
        i_dc = saturate_dc_current(i_tau, params.i_dc_max)

        omega_dot = 0.0
        v_mag_dot = 0.0
        if slot.kind is Droop:
            theta_dot, omega = droop_update(outer, p_f, v_dc, ctrl)
        elif slot.kind is Dvoc:
            theta_dot, v_mag_dot = dvoc_update(outer, p_f, q_f, v_dc, ctrl)
            omega = theta_dot
        else:
            omega = outer.omega
            theta_dot = omega

        meas = InnerLoopMeasurements(outer.theta, v, i_s, i_grid, v_dc)
        out = inner_loops(reference_voltage(outer, ctrl), meas, loops, cfg.inner_loop, omega, params)
        conv = converter_derivatives(ConverterState(v_dc, i_s, v), out.m_ab, i_grid, i_dc, params)
        if slot.kind is Vsg:
            theta_dot, omega_dot = vsg_update(outer, p_f, v_dc, conv.v_dc, ctrl)

        d[b] = conv.v_dc
        d[b + 1], d[b + 2] = conv.i_s_ab
        d[b + 3] = i_tau_dot
        d[b + 4] = theta_dot
        d[b + 5] = omega_dot
        d[b + 6] = v_mag_dot
        d[b + 7], d[b + 8] = power_filter_derivative((p_f, q_f), (p_inst, q_inst), ctrl.omega_f)
        d[b + 9], d[b + 10] = out.xv_dot
        d[b + 11], d[b + 12] = out.xi_dot

        return GfcSignals(
            v_dc=v_dc / params.v_dc_ref,
            i_dc=i_dc,
            i_tau=i_tau,
            omega=theta_dot / OMEGA_BASE,
            p=p_inst,
            q=q_inst,
            v_mag=math.hypot(v[0], v[1]),
            switch_balance=switch_power_mismatch(out.m_ab, i_s, v_dc),
        )

    def sample(self, x: np.ndarray) -> List[float]:
        """Logged channel values at state x, in channel_names order."""
        xs = x.tolist()
        row: List[float] = []
        for signals in self.evaluate(x)[1]:
            row.extend(signals)
        for slot in self.machines:
            b = slot.offset
            vb = slot.bus_col
            p_terminal = xs[vb] * xs[b] + xs[vb + 1] * xs[b + 1]
            row.extend([xs[b + 3] / OMEGA_BASE, p_terminal, xs[b + 2]])
        v_bus = self.bus_voltages(x)
        row.extend(np.hypot(v_bus[:, 0], v_bus[:, 1]).tolist())
        i_series = self.series_currents(x)
        i_load = self.load_currents(x)
        row.append(self.net.load_power(v_bus, i_load))
        row.append(self.net.resistive_losses(i_series))
        return row

    def bus_voltages(self, x: np.ndarray) -> np.ndarray:
        return x[self.bus_offset:self.series_offset].reshape(-1, 2)

    def series_currents(self, x: np.ndarray) -> np.ndarray:
        return x[self.series_offset:self.load_offset].reshape(-1, 2)

    def load_currents(self, x: np.ndarray) -> np.ndarray:
        end = self.load_offset + 2 * self.net.n_load
        return x[self.load_offset:end].reshape(-1, 2)

    def collapsed_device(self, x: np.ndarray) -> Optional[str]:
        """Name of the first converter whose DC link is below the early-stop floor."""
        for slot in self.gfcs:
            if x[slot.offset] <= VDC_FLOOR * slot.cfg.converter.v_dc_ref:
                return slot.cfg.name
        return None

    def apply_event(self, event: LoadStepEvent) -> None:
        if apply_event(self.graph, event):
            self.net.refresh_loads()
            self._build_matrix()

    # -- initialization ---------------------------------------------------

    def initial_state(self) -> np.ndarray:
        """State at the rated-frequency operating point; sets machine power setpoints."""
        op = solve_operating_point(self.net, [s.cfg for s in self.gfcs], [s.sm for s in self.machines])
        x = np.zeros(len(self.layout))
        v = op.v_bus
        for k in range(self.net.n_bus):
            x[self.bus_offset + 2 * k] = v[k].real
            x[self.bus_offset + 2 * k + 1] = v[k].imag
        for e in range(self.net.n_series):
            f, t = self.net.from_idx[e], self.net.to_idx[e]
            z = complex(self.net.r[e], self.net.l[e] * OMEGA_BASE)
            i = (v[f] / self.net.ratio[e] - v[t]) / z
            x[self.series_offset + 2 * e] = i.real
            x[self.series_offset + 2 * e + 1] = i.imag
        for j in range(self.net.n_load):
            i = -1j * self.net.b_l[j] * v[self.net.load_idx[j]]
            x[self.load_offset + 2 * j] = i.real
            x[self.load_offset + 2 * j + 1] = i.imag
        for slot in self.machines:
            i = op.machine_currents[slot.sm.name]
            slot.sm.p_set = op.machine_power[slot.sm.name]
            slot.sm.delta = 0.0
            slot.sm.omega_m = OMEGA_BASE
            x[slot.offset:slot.offset + 4] = [i.real, i.imag, 0.0, OMEGA_BASE]
        for slot in self.gfcs:
            point = op.gfcs[slot.cfg.name]
            theta = math.atan2(point.v.imag, point.v.real)
            r_f = slot.cfg.converter.r_f
            i_s_dq = phasor_dq(point.i_s, theta)
            x[slot.offset:slot.offset + len(GFC_STATES)] = [
                point.v_dc, point.i_s.real, point.i_s.imag, point.i_tau,
                theta, OMEGA_BASE, abs(point.v), point.p, point.q,
                0.0, 0.0, r_f * i_s_dq[0], r_f * i_s_dq[1],
            ]
        return x


def assemble(scenario: Scenario) -> FlatSystem:
    """
    Compile a scenario into a flat ODE system.

    Raises:
        ConfigurationError: On dangling device or bus references.
    """
    if scenario.dt <= 0 or scenario.t_end < 0 or scenario.log_decimation < 1:
        raise ConfigurationError("Scenario needs dt > 0, t_end >= 0 and log_decimation >= 1",
                                 key='simulation')
    return FlatSystem(scenario)


def _non_finite(x: np.ndarray) -> IntegrationFault:
    index = int(np.flatnonzero(~np.isfinite(x))[0])
    return IntegrationFault(f"Non-finite value in state {index}", index=index)


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], x: np.ndarray, t: float, dt: float) -> np.ndarray:
    """
    One classical fourth-order Runge-Kutta step.

    Non-finite stage values propagate into the result, which is checked once.

    Raises:
        IntegrationFault: If the new state is non-finite, or a stage fails on
            a non-finite stage state.
    """
    if dt <= 0:
        raise ValueError('dt must be positive')
    x = np.asarray(x, dtype=float)
    half = 0.5 * dt
    stage = x
    try:
        k1 = np.asarray(f(t, stage), dtype=float)
        stage = x + half * k1
        k2 = np.asarray(f(t + half, stage), dtype=float)
        stage = x + half * k2
        k3 = np.asarray(f(t + half, stage), dtype=float)
        stage = x + dt * k3
        k4 = np.asarray(f(t + dt, stage), dtype=float)
    except (ValueError, OverflowError):
        # math.cos and friends reject inf
        if np.isfinite(stage).all():
            raise
        raise _non_finite(stage) from None
    x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(x_new).all():
        raise _non_finite(x_new)
    return x_new


def _fault_message(system: FlatSystem, exc: Exception, t: float) -> str:
    if isinstance(exc, IntegrationFault) and exc.index is not None:
        exc.state_name = system.layout.names[exc.index]
        return f"Integration fault at t={t:.6f} s in state {exc.state_name}"
    return f"{type(exc).__name__} at t={t:.6f} s: {exc}"


def run(scenario: Scenario, system: Optional[FlatSystem] = None) -> RunResult:
    """
    Initialize, pre-roll and integrate a scenario.

    The run stops early, keeping its partial log, when a DC link falls to the
    early-stop floor (status 'collapsed') or integration breaks down
    (status 'fault').
    """
    system = system or assemble(scenario)
    dt = scenario.dt
    x = system.initial_state()
    builder = _LogBuilder(system.channel_names)

    n_pre = int(round(scenario.preroll / dt))
    try:
        for k in range(n_pre):
            x = rk4_step(system.derivative, x, (k - n_pre) * dt, dt)
    except (IntegrationFault, ControllerFault) as exc:
        message = _fault_message(system, exc, -scenario.preroll)
        logger.error(message)
        builder.append(0.0, system.sample(x))
        return RunResult(builder.build(), x, STATUS_FAULT, message, list(system.layout.names))
    logger.info("Pre-roll of %.3f s complete", n_pre * dt)

    builder.append(0.0, system.sample(x))
    events = sorted(scenario.events, key=lambda e: e.t_event)
    event_steps = [int(round(e.t_event / dt)) for e in events]
    next_event = 0
    n_steps = int(round(scenario.t_end / dt))
    status, message = STATUS_COMPLETED, ''
    steps_done = 0
    last_logged = 0

    for k in range(n_steps):
        while next_event < len(events) and event_steps[next_event] <= k:
            system.apply_event(events[next_event])
            next_event += 1
        try:
            x_new = rk4_step(system.derivative, x, k * dt, dt)
        except (IntegrationFault, ControllerFault) as exc:
            status = STATUS_FAULT
            message = _fault_message(system, exc, k * dt)
            logger.error(message)
            break
        x = x_new
        steps_done = k + 1
        t = steps_done * dt
        if steps_done % scenario.log_decimation == 0:
            builder.append(t, system.sample(x))
            last_logged = steps_done
        device = system.collapsed_device(x)
        if device is not None:
            status = STATUS_COLLAPSED
            message = f"{device} DC link fell below {VDC_FLOOR:.0%} of its setpoint at t={t:.6f} s"
            logger.warning(message)
            break

    if steps_done != last_logged:
        builder.append(steps_done * dt, system.sample(x))
    if status == STATUS_COMPLETED:
        logger.info("Run '%s' completed at t=%.3f s", scenario.name, steps_done * dt)
    return RunResult(builder.build(), x, status, message, list(system.layout.names))
