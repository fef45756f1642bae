"""
Average-value model of a grid-forming converter.

Covers the DC link, the current-limited DC energy source and the switching
stage feeding the output RLC filter. All quantities are per unit; DC-side
values use the AC peak-phase voltage as base so that switch power balances
exactly (v_dc * i_x == v_s . i_s).

Two-component quantities (alpha/beta or d/q) are plain ``(x, y)`` tuples.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

Vec2 = Tuple[float, float]


@dataclass(frozen=True)
class ConverterParams:
    """Electrical parameters of one converter (system per unit, inductance and
    capacitance in p.u. seconds)."""

    c_dc: float = 0.05
    g_dc: float = 0.001
    l_f: float = 0.1 / (2 * math.pi * 50.0)
    c_f: float = 0.05 / (2 * math.pi * 50.0)
    r_f: float = 0.005
    i_dc_max: float = 0.2845
    v_dc_ref: float = 2.5
    k_dc: float = 5.0
    tau_dc: float = 0.03


@dataclass
class ConverterState:
    v_dc: float
    i_s_ab: Vec2 = (0.0, 0.0)
    v_ab: Vec2 = (0.0, 0.0)
    i_tau_lag: float = 0.0


class ConverterDerivatives(NamedTuple):
    v_dc: float
    i_s_ab: Vec2
    v_ab: Vec2

    def as_list(self):
        return [self.v_dc, self.i_s_ab[0], self.i_s_ab[1], self.v_ab[0], self.v_ab[1]]


def switch_current(m_ab: Sequence[float], i_s_ab: Sequence[float]) -> float:
    """DC current drawn by the switching stage, i_x = (1/2) m^T i_s."""
    return 0.5 * (m_ab[0] * i_s_ab[0] + m_ab[1] * i_s_ab[1])


def switch_voltage(m_ab: Sequence[float], v_dc: float) -> Vec2:
    """Switch-side AC voltage of the average model, v_s = (1/2) v_dc m."""
    half = 0.5 * v_dc
    return (half * m_ab[0], half * m_ab[1])


def raw_dc_demand(v_dc: float, p_ac_filtered: float, params: ConverterParams) -> float:
    """Governor, power feedforward and loss feedforward terms of the source demand."""
    return (
        params.k_dc * (params.v_dc_ref - v_dc)
        + p_ac_filtered / params.v_dc_ref
        + params.g_dc * params.v_dc_ref
    )


def dc_demand_derivative(i_tau_lag: float, raw_demand: float, tau_dc: float) -> float:
    """Continuous-time form of the first-order demand lag."""
    if tau_dc <= 0.0:
        return 0.0
    return (raw_demand - i_tau_lag) / tau_dc


def dc_source_demand(state: ConverterState, p_ac_filtered: float,
                     params: ConverterParams, dt: float) -> float:
    """
    Advance the lagged DC source demand by one step of length dt.

    The lag is discretized exactly (zero-order hold on the raw demand), so a
    converged lag stays converged for any dt. With tau_dc = 0 the output is the
    raw demand.

    Returns:
        The updated demand i_tau; state.i_tau_lag is updated in place.
    """
    if dt <= 0.0:
        raise ValueError('dt must be positive')
    raw = raw_dc_demand(state.v_dc, p_ac_filtered, params)
    if params.tau_dc <= 0.0:
        state.i_tau_lag = raw
    else:
        blend = -math.expm1(-dt / params.tau_dc)
        state.i_tau_lag += blend * (raw - state.i_tau_lag)
    return state.i_tau_lag


def saturate_dc_current(i_tau: float, i_dc_max: float) -> float:
    """Clamp the demanded DC current to +/- i_dc_max."""
    if abs(i_tau) < i_dc_max:
        return i_tau
    return math.copysign(i_dc_max, i_tau) if i_tau != 0.0 else 0.0


def converter_derivatives(state: ConverterState, m_ab: Sequence[float],
                          i_grid_ab: Sequence[float], i_dc: float,
                          params: ConverterParams) -> ConverterDerivatives:
    """
    Right-hand side of the converter model.

        C_dc dv_dc/dt = i_dc - G_dc v_dc - i_x
        L    di_s/dt  = v_s - R i_s - v
        C    dv/dt    = i_s - i_grid
    """
    i_s = state.i_s_ab
    v = state.v_ab
    i_x = switch_current(m_ab, i_s)
    v_s = switch_voltage(m_ab, state.v_dc)
    v_dc_dot = (i_dc - params.g_dc * state.v_dc - i_x) / params.c_dc
    i_s_dot = (
        (v_s[0] - params.r_f * i_s[0] - v[0]) / params.l_f,
        (v_s[1] - params.r_f * i_s[1] - v[1]) / params.l_f,
    )
    v_dot = (
        (i_s[0] - i_grid_ab[0]) / params.c_f,
        (i_s[1] - i_grid_ab[1]) / params.c_f,
    )
    return ConverterDerivatives(v_dc_dot, i_s_dot, v_dot)


def switch_power_mismatch(m_ab: Sequence[float], i_s_ab: Sequence[float], v_dc: float) -> float:
    """|v_dc i_x - v_s . i_s|, zero up to rounding for the average model."""
    v_s = switch_voltage(m_ab, v_dc)
    return abs(v_dc * switch_current(m_ab, i_s_ab) - (v_s[0] * i_s_ab[0] + v_s[1] * i_s_ab[1]))
