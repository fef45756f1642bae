"""
Grid-forming control laws.

Outer synchronization controllers (frequency droop, virtual synchronous
generator, dispatchable virtual oscillator) each blend their conventional law
with a DC-voltage-derived frequency term weighted by ``alpha``. The inner
cascade (voltage loop, AC current limit, current loop) turns the outer
controller's voltage reference into a modulation command.

Frequencies are in rad/s, everything else in per unit. Two-component
quantities are plain ``(x, y)`` tuples as in :mod:`core.converter`.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from config import DVOC_MIN_MAGNITUDE, MODULATION_MIN_VDC, OMEGA_BASE, S_BASE_VA
from core.converter import ConverterParams, Vec2
from utils.errors import ControllerFault

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)

DVOC_PHASE_LAWS = ('consistent', 'paper_literal')


@dataclass(frozen=True)
class Setpoints:
    p_ref: float = 0.0
    q_ref: float = 0.0
    v_ref: float = 1.0
    omega_ref: float = OMEGA_BASE
    v_dc_ref: float = 2.5


@dataclass(frozen=True)
class Droop:
    d_omega: float = 2 * math.pi * 0.05


@dataclass(frozen=True)
class Vsg:
    """Swing-equation gains. J and D_p are SI; power_base (VA) scales the
    per-unit power error into watts and comes from the scenario bases."""

    J: float = 2.0e3
    D_p: float = 1.0e5
    power_base: float = S_BASE_VA


@dataclass(frozen=True)
class Dvoc:
    eta: float = 0.021
    mu: float = 6.66e4
    # Power-frame rotation angle; carried for provenance, unused by the polar-form law.
    kappa: float = math.pi / 2
    phase_law: str = 'consistent'


ControllerKind = Union[Droop, Vsg, Dvoc]


@dataclass(frozen=True)
class OuterControllerConfig:
    kind: ControllerKind
    alpha: float = 0.5
    setpoints: Setpoints = field(default_factory=Setpoints)
    dc_feedback: bool = True
    omega_f: float = 2 * math.pi * 10.0

    @property
    def name(self) -> str:
        return type(self.kind).__name__.lower()

    @property
    def effective_alpha(self) -> float:
        """Weight of the conventional law; 1.0 when the DC feedback path is off."""
        return self.alpha if self.dc_feedback else 1.0


@dataclass
class OuterControllerState:
    theta: float = 0.0
    omega: float = OMEGA_BASE
    v_mag: float = 1.0


@dataclass(frozen=True)
class InnerLoopConfig:
    kp_v: float = 2.0
    ki_v: float = 40.0
    kp_i: float = 1.0
    ki_i: float = 10.0
    i_ac_max: float = 1.2
    ac_limit: bool = False
    decoupling: bool = True
    integrator_limit: float = 2.0


@dataclass
class InnerLoopState:
    """Voltage-loop and current-loop PI integrators, dq frame."""

    xv_dq: Vec2 = (0.0, 0.0)
    xi_dq: Vec2 = (0.0, 0.0)


class InnerLoopMeasurements(NamedTuple):
    theta: float
    v_ab: Vec2
    i_s_ab: Vec2
    i_grid_ab: Vec2
    v_dc: float


class InnerLoopOutput(NamedTuple):
    m_ab: Vec2
    xv_dot: Vec2
    xi_dot: Vec2
    i_ref_dq: Vec2
    limiting: bool


# ---------------------------------------------------------------------------
# Frame transforms
# ---------------------------------------------------------------------------

def clarke(i_abc: Sequence[float]) -> Vec2:
    """Amplitude-invariant Clarke transform. Accepts scalars or sample arrays per phase."""
    a, b, c = (np.asarray(x, dtype=float) for x in i_abc)
    alpha = (2.0 / 3.0) * (a - 0.5 * b - 0.5 * c)
    beta = (b - c) / SQRT3
    if alpha.ndim == 0:
        return (float(alpha), float(beta))
    return (alpha, beta)


def park(x_ab: Sequence[float], theta: float) -> Vec2:
    """Rotate a stationary-frame vector by -theta."""
    c = math.cos(theta)
    s = math.sin(theta)
    return (x_ab[0] * c + x_ab[1] * s, -x_ab[0] * s + x_ab[1] * c)


def inverse_park(x_dq: Sequence[float], theta: float) -> Vec2:
    c = math.cos(theta)
    s = math.sin(theta)
    return (x_dq[0] * c - x_dq[1] * s, x_dq[0] * s + x_dq[1] * c)


# ---------------------------------------------------------------------------
# Power measurement
# ---------------------------------------------------------------------------

def instantaneous_power(v_ab: Sequence[float], i_ab: Sequence[float]) -> Tuple[float, float]:
    """p = v . i and q = v_beta i_alpha - v_alpha i_beta (positive for lagging current)."""
    p = v_ab[0] * i_ab[0] + v_ab[1] * i_ab[1]
    q = v_ab[1] * i_ab[0] - v_ab[0] * i_ab[1]
    return p, q


def power_filter_derivative(pq_filtered: Sequence[float], pq_inst: Sequence[float],
                            omega_f: float) -> Tuple[float, float]:
    return (
        omega_f * (pq_inst[0] - pq_filtered[0]),
        omega_f * (pq_inst[1] - pq_filtered[1]),
    )


def power_measurement(v_ab: Sequence[float], i_ab: Sequence[float], omega_f: float, dt: float,
                      previous: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    """
    One step of the first-order low-pass power measurement.

    Args:
        v_ab: Terminal voltage.
        i_ab: Current leaving the converter terminal.
        omega_f: Filter cutoff (rad/s); math.inf returns the instantaneous values.
        dt: Step length (s).
        previous: Filtered (p, q) before this step, zero if omitted.

    Returns:
        Filtered (p, q).
    """
    if dt <= 0.0 or omega_f <= 0.0:
        raise ValueError('dt and omega_f must be positive')
    p, q = instantaneous_power(v_ab, i_ab)
    p_prev, q_prev = previous if previous is not None else (0.0, 0.0)
    blend = 1.0 if math.isinf(omega_f) else -math.expm1(-omega_f * dt)
    return (p_prev + blend * (p - p_prev), q_prev + blend * (q - q_prev))


# ---------------------------------------------------------------------------
# Outer controllers
# ---------------------------------------------------------------------------

def _dc_frequency(v_dc: float, sp: Setpoints) -> float:
    return (v_dc / sp.v_dc_ref) * sp.omega_ref


def droop_update(state: OuterControllerState, p: float, v_dc: float,
                 cfg: OuterControllerConfig) -> Tuple[float, float]:
    """
    Frequency droop with DC voltage feedback.

        omega = alpha (omega* + d_omega (p* - p)) + (1 - alpha) (v_dc / v_dc*) omega*

    Returns:
        (theta_dot, omega_out); both equal the blended frequency.
    """
    if not isinstance(cfg.kind, Droop):
        raise TypeError('droop_update needs a Droop controller')
    sp = cfg.setpoints
    conventional = sp.omega_ref + cfg.kind.d_omega * (sp.p_ref - p)
    if not cfg.dc_feedback:
        return conventional, conventional
    alpha = cfg.alpha
    omega = alpha * conventional + (1.0 - alpha) * _dc_frequency(v_dc, sp)
    return omega, omega


def vsg_update(state: OuterControllerState, p: float, v_dc: float, v_dc_dot: float,
               cfg: OuterControllerConfig) -> Tuple[float, float]:
    """
    Virtual synchronous generator with DC voltage feedback.

        omega_dot = alpha [(p* - p) S / (J omega*) + (D_p / J)(omega* - omega)]
                    + (1 - alpha) (omega* / v_dc*) v_dc_dot

    S is the configured power base. v_dc_dot is the analytic DC-link derivative.
    """
    if not isinstance(cfg.kind, Vsg):
        raise TypeError('vsg_update needs a Vsg controller')
    sp = cfg.setpoints
    gains = cfg.kind
    swing = ((sp.p_ref - p) * gains.power_base / (gains.J * sp.omega_ref)
             + (gains.D_p / gains.J) * (sp.omega_ref - state.omega))
    if not cfg.dc_feedback:
        return state.omega, swing
    alpha = cfg.alpha
    omega_dot = alpha * swing + (1.0 - alpha) * (sp.omega_ref / sp.v_dc_ref) * v_dc_dot
    return state.omega, omega_dot


def dvoc_update(state: OuterControllerState, p: float, q: float, v_dc: float,
                cfg: OuterControllerConfig) -> Tuple[float, float]:
    """
    Dispatchable virtual oscillator in polar form with DC voltage feedback.

    The 'consistent' phase law blends the full conventional frequency with the
    DC term; 'paper_literal' keeps omega* outside the blend, which runs at
    (2 - alpha) omega* at nominal DC voltage. The magnitude law does not depend
    on alpha or v_dc.

    Raises:
        ControllerFault: If the voltage magnitude state is degenerate.
    """
    if not isinstance(cfg.kind, Dvoc):
        raise TypeError('dvoc_update needs a Dvoc controller')
    if state.v_mag <= DVOC_MIN_MAGNITUDE:
        raise ControllerFault(f"dVOC voltage magnitude {state.v_mag:.3e} is degenerate")
    sp = cfg.setpoints
    gains = cfg.kind
    v_ref_sq = sp.v_ref * sp.v_ref
    v_sq = state.v_mag * state.v_mag

    p_term = gains.eta * (sp.p_ref / v_ref_sq - p / v_sq)
    if not cfg.dc_feedback:
        theta_dot = sp.omega_ref + p_term
    else:
        alpha = cfg.alpha
        dc_term = (1.0 - alpha) * _dc_frequency(v_dc, sp)
        if gains.phase_law == 'paper_literal':
            theta_dot = sp.omega_ref + alpha * p_term + dc_term
        else:
            theta_dot = alpha * (sp.omega_ref + p_term) + dc_term

    v_mag_dot = (gains.eta * (sp.q_ref / v_ref_sq - q / v_sq) * state.v_mag
                 + (gains.eta * gains.mu / v_ref_sq) * (v_ref_sq - v_sq) * state.v_mag)
    return theta_dot, v_mag_dot


def reference_voltage(state: OuterControllerState, cfg: OuterControllerConfig) -> Vec2:
    """Stationary-frame voltage reference at angle theta."""
    magnitude = state.v_mag if isinstance(cfg.kind, Dvoc) else cfg.setpoints.v_ref
    return (magnitude * math.cos(state.theta), magnitude * math.sin(state.theta))


# ---------------------------------------------------------------------------
# Inner loops
# ---------------------------------------------------------------------------

def ac_current_limit(i_ref_dq: Sequence[float], i_meas_dq: Sequence[float],
                     i_ac_max: float) -> Vec2:
    """
    AC current limiting of the voltage-loop output.

    Triggered by the measured current magnitude; the reference is scaled to
    magnitude i_ac_max. A zero reference while triggered yields zero.
    """
    if math.hypot(i_meas_dq[0], i_meas_dq[1]) <= i_ac_max:
        return (i_ref_dq[0], i_ref_dq[1])
    norm = math.hypot(i_ref_dq[0], i_ref_dq[1])
    if norm == 0.0:
        return (0.0, 0.0)
    gamma = i_ac_max / norm
    return (gamma * i_ref_dq[0], gamma * i_ref_dq[1])


def _freeze(error: float, output: float, saturated: bool) -> bool:
    return saturated and error * output > 0.0


def _clamp_rate(x: float, rate: float, limit: float) -> float:
    if (x >= limit and rate > 0.0) or (x <= -limit and rate < 0.0):
        return 0.0
    return rate


def inner_loops(v_ref_ab: Sequence[float], meas: InnerLoopMeasurements, loop_state: InnerLoopState,
                cfg: InnerLoopConfig, omega: float,
                converter: ConverterParams) -> InnerLoopOutput:
    """
    Continuous-time voltage and current PI cascade in the dq frame at meas.theta.

    Returns the clamped modulation command and the integrator rates after
    conditional integration and integrator clamping.
    """
    theta = meas.theta
    v_dq = park(meas.v_ab, theta)
    i_s_dq = park(meas.i_s_ab, theta)
    i_g_dq = park(meas.i_grid_ab, theta)
    v_ref_dq = park(v_ref_ab, theta)

    wc = omega * converter.c_f if cfg.decoupling else 0.0
    wl = omega * converter.l_f if cfg.decoupling else 0.0

    ev = (v_ref_dq[0] - v_dq[0], v_ref_dq[1] - v_dq[1])
    xv = loop_state.xv_dq
    i_ref = (
        cfg.kp_v * ev[0] + xv[0] + i_g_dq[0] - wc * v_dq[1],
        cfg.kp_v * ev[1] + xv[1] + i_g_dq[1] + wc * v_dq[0],
    )
    limiting = False
    if cfg.ac_limit:
        limited = ac_current_limit(i_ref, i_s_dq, cfg.i_ac_max)
        limiting = limited != i_ref
        i_ref = limited

    ei = (i_ref[0] - i_s_dq[0], i_ref[1] - i_s_dq[1])
    xi = loop_state.xi_dq
    v_s_ref = (
        cfg.kp_i * ei[0] + xi[0] + v_dq[0] - wl * i_s_dq[1],
        cfg.kp_i * ei[1] + xi[1] + v_dq[1] + wl * i_s_dq[0],
    )

    scale = 2.0 / max(meas.v_dc, MODULATION_MIN_VDC)
    m_ab = inverse_park((scale * v_s_ref[0], scale * v_s_ref[1]), theta)
    m_norm = math.hypot(m_ab[0], m_ab[1])
    modulation_saturated = m_norm > 1.0
    if modulation_saturated:
        m_ab = (m_ab[0] / m_norm, m_ab[1] / m_norm)

    limit = cfg.integrator_limit
    xv_dot = tuple(
        _clamp_rate(xv[k], 0.0 if _freeze(ev[k], i_ref[k], limiting) else cfg.ki_v * ev[k], limit)
        for k in (0, 1)
    )
    xi_dot = tuple(
        _clamp_rate(xi[k], 0.0 if _freeze(ei[k], v_s_ref[k], modulation_saturated) else cfg.ki_i * ei[k], limit)
        for k in (0, 1)
    )
    return InnerLoopOutput(m_ab, xv_dot, xi_dot, i_ref, limiting)


def inner_loops_step(v_ref_ab: Sequence[float], meas: InnerLoopMeasurements, loop_state: InnerLoopState,
                     cfg: InnerLoopConfig, omega: float, dt: float,
                     converter: Optional[ConverterParams] = None) -> Vec2:
    """
    Discrete step of the inner cascade.

    The modulation command is computed from the integrators at the start of
    the step; the integrators then advance by forward Euler and are clamped to
    +/- cfg.integrator_limit.

    Returns:
        Modulation command m_ab with norm at most 1.
    """
    if dt <= 0.0:
        raise ValueError('dt must be positive')
    out = inner_loops(v_ref_ab, meas, loop_state, cfg, omega, converter or ConverterParams())
    limit = cfg.integrator_limit

    def advance(x: Vec2, rate: Vec2) -> Vec2:
        return tuple(min(limit, max(-limit, x[k] + dt * rate[k])) for k in (0, 1))

    loop_state.xv_dq = advance(loop_state.xv_dq, out.xv_dot)
    loop_state.xi_dq = advance(loop_state.xi_dq, out.xi_dot)
    return out.m_ab
