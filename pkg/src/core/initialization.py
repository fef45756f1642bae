"""
Steady-state operating point of an assembled system.

A 50 Hz phasor solution of the network with the machine EMF as angle
reference and slack. Each converter bus is solved together with its DC link:
the converter's injection satisfies the equilibrium of its own outer law at
rated frequency (including the DC feedback term), and its DC-link voltage sits
where the source current balances switch power and DC losses.
"""
import cmath
import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Dict, List, Sequence

import numpy as np
from scipy.optimize import fsolve

from config import OMEGA_BASE
from core.controllers import Droop, Dvoc, OuterControllerConfig, Vsg
from core.converter import ConverterParams, raw_dc_demand, saturate_dc_current
from core.network import CompiledNetwork, SyncMachine
from utils.errors import ConfigurationError

if TYPE_CHECKING:
    from core.engine import GfcConfig

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-9


@dataclass
class GfcOperatingPoint:
    v: complex
    i_grid: complex
    i_s: complex
    p: float
    q: float
    v_dc: float
    i_tau: float


@dataclass
class OperatingPoint:
    v_bus: np.ndarray
    gfcs: Dict[str, GfcOperatingPoint]
    machine_currents: Dict[str, complex]
    machine_power: Dict[str, float]
    residual: float


def bus_admittance(net: CompiledNetwork) -> np.ndarray:
    """Complex bus admittance matrix at rated frequency: series elements, line
    charging, bus shunts and load impedances."""
    n = net.n_bus
    y_bus = np.zeros((n, n), dtype=complex)
    for e in range(net.n_series):
        f, t = net.from_idx[e], net.to_idx[e]
        a = net.ratio[e]
        y = 1.0 / complex(net.r[e], net.l[e] * OMEGA_BASE)
        y_bus[f, f] += y / (a * a)
        y_bus[f, t] -= y / a
        y_bus[t, f] -= y / a
        y_bus[t, t] += y
    graph = net.graph
    for branch in graph.branches:
        half = 0.5j * branch.b_shunt
        y_bus[net.bus_index[branch.from_bus], net.bus_index[branch.from_bus]] += half
        y_bus[net.bus_index[branch.to_bus], net.bus_index[branch.to_bus]] += half
    for bus_id, bus in graph.buses.items():
        y_bus[net.bus_index[bus_id], net.bus_index[bus_id]] += 1j * bus.b_shunt
    for j in range(net.n_load):
        k = net.load_idx[j]
        y_bus[k, k] += complex(net.g[j], -net.b_l[j])
    return y_bus


def frequency_residual(controller: OuterControllerConfig, p: float, v_dc: float, v_mag: float) -> float:
    """
    Steady-state residual of the outer law at rated frequency.

    Droop and dVOC return their frequency error relative to omega*, so the
    DC term and the power term enter at their true weights whatever alpha is.
    A swing equation only rests at p*; its residual is the power error.

    The literal dVOC phase law has no rated-frequency rest point at a
    positive DC voltage; it starts from the consistent law's point.
    """
    sp = controller.setpoints
    kind = controller.kind
    if isinstance(kind, Vsg):
        return p - sp.p_ref
    if isinstance(kind, Droop):
        conventional = sp.omega_ref + kind.d_omega * (sp.p_ref - p)
    elif isinstance(kind, Dvoc):
        conventional = sp.omega_ref + kind.eta * (sp.p_ref / (sp.v_ref * sp.v_ref) - p / (v_mag * v_mag))
    else:
        raise TypeError(f"Unknown controller kind {type(kind).__name__}")
    alpha = controller.effective_alpha
    omega = alpha * conventional + (1.0 - alpha) * sp.omega_ref * v_dc / sp.v_dc_ref
    return (omega - sp.omega_ref) / sp.omega_ref


def dvoc_magnitude_residual(controller: OuterControllerConfig, q: float, v_mag: float) -> float:
    """Magnitude law divided by eta * mu * v_mag; zero at equilibrium."""
    sp = controller.setpoints
    kind = controller.kind
    v_ref_sq = sp.v_ref * sp.v_ref
    return (sp.q_ref / v_ref_sq - q / (v_mag * v_mag)) / kind.mu + (v_ref_sq - v_mag * v_mag) / v_ref_sq


def dc_link_residual(params: ConverterParams, v_dc: float, p: float, i_s: complex) -> float:
    """Source current minus DC losses and switch current at a DC-link equilibrium."""
    p_switch = p + params.r_f * abs(i_s) ** 2
    i_dc = saturate_dc_current(raw_dc_demand(v_dc, p, params), params.i_dc_max)
    return i_dc - params.g_dc * v_dc - p_switch / v_dc


def solve_operating_point(net: CompiledNetwork, gfcs: Sequence['GfcConfig'],
                          machines: Sequence[SyncMachine]) -> OperatingPoint:
    """
    Solve the rated-frequency operating point.

    Raises:
        ConfigurationError: If no operating point is found.
    """
    n = net.n_bus
    y_bus = bus_admittance(net)
    gfc_rows = [net.bus_index[g.bus] for g in gfcs]
    if len(set(gfc_rows)) != len(gfc_rows):
        raise ConfigurationError("Two converters share one bus", key='gfcs')
    plain = [k for k in range(n) if k not in set(gfc_rows)]
    machine_rows = [net.bus_index[sm.bus] for sm in machines]
    z_machine = [complex(sm.r_s, sm.x_t) for sm in machines]
    is_dvoc = [isinstance(g.controller.kind, Dvoc) for g in gfcs]
    b_f = [g.converter.c_f * OMEGA_BASE for g in gfcs]

    def unpack(z: np.ndarray):
        v = np.zeros(n, dtype=complex)
        pos = 2 * len(plain)
        v[plain] = z[0:pos:2] + 1j * z[1:pos:2]
        currents, dc = [], []
        for j, g in enumerate(gfcs):
            theta = z[pos]
            pos += 1
            if is_dvoc[j]:
                mag = z[pos]
                pos += 1
            else:
                mag = g.controller.setpoints.v_ref
            v[gfc_rows[j]] = cmath.rect(mag, theta)
            currents.append(complex(z[pos], z[pos + 1]))
            dc.append(z[pos + 2])
            pos += 3
        return v, currents, dc

    def residual(z: np.ndarray) -> np.ndarray:
        v, currents, dc = unpack(z)
        injection = np.zeros(n, dtype=complex)
        for k, sm, zm in zip(machine_rows, machines, z_machine):
            injection[k] += (sm.e_mag - v[k]) / zm
        for j, k in enumerate(gfc_rows):
            injection[k] += currents[j]
        mismatch = y_bus @ v - injection
        out = [mismatch.real, mismatch.imag]
        extra: List[float] = []
        for j, g in enumerate(gfcs):
            vk = v[gfc_rows[j]]
            s = vk * currents[j].conjugate()
            mag = abs(vk)
            extra.append(frequency_residual(controllers[j], s.real, dc[j], mag))
            if is_dvoc[j]:
                extra.append(dvoc_magnitude_residual(g.controller, s.imag, mag))
            i_s = currents[j] + 1j * b_f[j] * vk
            extra.append(dc_link_residual(g.converter, dc[j], s.real, i_s))
        return np.concatenate(out + [np.asarray(extra)])

    guess: List[float] = []
    for _ in plain:
        guess += [1.0, 0.0]
    for j, g in enumerate(gfcs):
        guess.append(0.0)
        if is_dvoc[j]:
            guess.append(g.controller.setpoints.v_ref)
        guess += [g.controller.setpoints.p_ref, 0.0, g.converter.v_dc_ref]

    controllers = [g.controller for g in gfcs]
    z, info, ier, msg = fsolve(residual, np.asarray(guess), xtol=1e-13, full_output=True)
    worst = float(np.max(np.abs(info['fvec']))) if len(guess) else 0.0
    if worst > RESIDUAL_TOLERANCE and any(c.dc_feedback for c in controllers):
        # Warm start from the point without DC feedback, then restore the blend.
        controllers = [replace(c, dc_feedback=False) for c in controllers]
        z_plain = fsolve(residual, np.asarray(guess), xtol=1e-13)
        controllers = [g.controller for g in gfcs]
        z, info, ier, msg = fsolve(residual, z_plain, xtol=1e-13, full_output=True)
        worst = float(np.max(np.abs(info['fvec'])))
        logger.debug("Operating point retried from the feedback-free point")
    if worst > RESIDUAL_TOLERANCE:
        raise ConfigurationError(
            f"No steady operating point found ({msg.strip()}, residual {worst:.2e})", key='network')
    logger.debug("Operating point solved in %d evaluations, residual %.2e", info['nfev'], worst)

    v, currents, dc = unpack(z)
    points: Dict[str, GfcOperatingPoint] = {}
    for j, g in enumerate(gfcs):
        vk = v[gfc_rows[j]]
        s = vk * currents[j].conjugate()
        i_s = currents[j] + 1j * b_f[j] * vk
        points[g.name] = GfcOperatingPoint(
            v=vk, i_grid=currents[j], i_s=i_s, p=s.real, q=s.imag, v_dc=float(dc[j]),
            i_tau=raw_dc_demand(float(dc[j]), s.real, g.converter),
        )
        if abs(raw_dc_demand(float(dc[j]), s.real, g.converter)) >= g.converter.i_dc_max:
            logger.warning("%s starts with its DC source saturated", g.name)

    machine_currents: Dict[str, complex] = {}
    machine_power: Dict[str, float] = {}
    for k, sm, zm in zip(machine_rows, machines, z_machine):
        i_sm = (sm.e_mag - v[k]) / zm
        machine_currents[sm.name] = i_sm
        machine_power[sm.name] = (sm.e_mag * i_sm.conjugate()).real
    return OperatingPoint(v_bus=v, gfcs=points, machine_currents=machine_currents,
                          machine_power=machine_power, residual=worst)


def phasor_dq(value: complex, theta: float) -> tuple:
    """Phasor expressed in a frame rotated by theta."""
    rotated = value * cmath.exp(-1j * theta)
    return (rotated.real, rotated.imag)
