"""
Electrical network model in the stationary alpha/beta frame.

Lines are pi-section RLC branches, transformers are series R-L behind an ideal
ratio, loads are constant impedance (a conductance plus an inductive branch
with its own current state) and the synchronous machine is a classical model:
EMF behind transient reactance with a swing equation and droop governor.

Network descriptions are JSON key-trees; see ``scenarios/networks/ieee9.json``.
"""
import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from config import GFCSIM_SCENARIO_DIR, OMEGA_BASE
from core.converter import Vec2
from utils.errors import ConfigurationError
from utils.key_tree import set_path
from utils.validators import validate_non_negative, validate_positive

logger = logging.getLogger(__name__)

IEEE9_NETWORK_FILE = 'networks/ieee9.json'


@dataclass
class Bus:
    id: str
    b_shunt: float = 0.0
    voltage_ab: Vec2 = (0.0, 0.0)
    attached: List[str] = field(default_factory=list)


@dataclass
class Branch:
    """Pi-section line. l is in p.u. seconds, b_shunt is the total line charging susceptance."""

    name: str
    from_bus: str
    to_bus: str
    r: float
    l: float
    b_shunt: float = 0.0
    i_ab: Vec2 = (0.0, 0.0)


@dataclass
class Transformer:
    name: str
    from_bus: str
    to_bus: str
    l_leak: float
    r_w: float = 0.0
    ratio: float = 1.0
    i_ab: Vec2 = (0.0, 0.0)


@dataclass
class Load:
    """Constant-impedance load sized by its power at nominal voltage."""

    name: str
    bus: str
    p: float = 0.0
    q: float = 0.0

    @property
    def g(self) -> float:
        return self.p

    @property
    def b_l(self) -> float:
        return self.q


@dataclass
class SyncMachine:
    name: str
    bus: str
    inertia_h: float = 3.0
    d_damp: float = 2.0
    x_t: float = 0.1
    r_s: float = 0.003
    e_mag: float = 1.05
    governor_droop: float = 0.05
    p_set: float = 0.0
    delta: float = 0.0
    omega_m: float = OMEGA_BASE

    @property
    def l_t(self) -> float:
        return self.x_t / OMEGA_BASE


@dataclass(frozen=True)
class LoadStepEvent:
    t_event: float
    bus: str
    p_before: float
    p_after: float
    q_after: Optional[float] = None


@dataclass
class NetworkGraph:
    buses: Dict[str, Bus]
    branches: List[Branch] = field(default_factory=list)
    transformers: List[Transformer] = field(default_factory=list)
    loads: List[Load] = field(default_factory=list)
    machines: List[SyncMachine] = field(default_factory=list)
    gfc_buses: Dict[str, str] = field(default_factory=dict)

    def sorted_bus_ids(self) -> List[str]:
        return sorted(self.buses, key=bus_sort_key)

    def loads_at(self, bus_id: str) -> List[Load]:
        return [load for load in self.loads if load.bus == bus_id]

    def counts(self) -> Dict[str, int]:
        return {
            'buses': len(self.buses),
            'lines': len(self.branches),
            'transformers': len(self.transformers),
            'loads': len(self.loads),
            'sources': len(self.machines) + len(self.gfc_buses),
        }


class NetworkDerivatives(NamedTuple):
    v_bus: np.ndarray
    i_branch: np.ndarray
    i_load: np.ndarray


def bus_sort_key(bus_id: str) -> Tuple[int, Any]:
    return (0, int(bus_id)) if bus_id.isdigit() else (1, bus_id)


# ---------------------------------------------------------------------------
# Network description files
# ---------------------------------------------------------------------------

def _require(ok_err: Tuple[bool, Optional[str]], key: str) -> None:
    ok, err = ok_err
    if not ok:
        raise ConfigurationError(err, key=key)


def _field(section: Mapping[str, Any], name: str, key: str, default: Any = None) -> Any:
    if name in section:
        return section[name]
    if default is None:
        raise ConfigurationError(f"Missing required field '{key}.{name}'", key=f"{key}.{name}")
    return default


def _public(mapping: Mapping[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in mapping.items() if not str(k).startswith('_')}


def network_from_dict(data: Mapping[str, Any]) -> NetworkGraph:
    """
    Build and validate a NetworkGraph from a network description tree.

    Raises:
        ConfigurationError: On missing fields, invalid values or dangling bus references.
    """
    if not isinstance(data, Mapping):
        raise ConfigurationError("Network description must be a mapping", key='network')
    buses_raw = _public(data.get('buses') or {})
    if not buses_raw:
        raise ConfigurationError("Network has no buses", key='network.buses')

    buses: Dict[str, Bus] = {}
    for bus_id, spec in buses_raw.items():
        spec = spec or {}
        key = f"network.buses.{bus_id}"
        b_shunt = spec.get('b_shunt', 0.0)
        _require(validate_non_negative(b_shunt, f"{key}.b_shunt"), f"{key}.b_shunt")
        buses[str(bus_id)] = Bus(id=str(bus_id), b_shunt=float(b_shunt))

    def bus_ref(value: Any, key: str) -> str:
        bus_id = str(value)
        if bus_id not in buses:
            raise ConfigurationError(f"{key} references unknown bus '{bus_id}'", key=key)
        return bus_id

    graph = NetworkGraph(buses=buses)

    for name, spec in _public(data.get('lines') or {}).items():
        key = f"network.lines.{name}"
        r = _field(spec, 'r', key, 0.0)
        x = _field(spec, 'x', key)
        b = spec.get('b', 0.0)
        _require(validate_non_negative(r, f"{key}.r"), f"{key}.r")
        _require(validate_positive(x, f"{key}.x"), f"{key}.x")
        _require(validate_non_negative(b, f"{key}.b"), f"{key}.b")
        graph.branches.append(Branch(
            name=name,
            from_bus=bus_ref(_field(spec, 'from', key), f"{key}.from"),
            to_bus=bus_ref(_field(spec, 'to', key), f"{key}.to"),
            r=float(r), l=float(x) / OMEGA_BASE, b_shunt=float(b),
        ))

    for name, spec in _public(data.get('transformers') or {}).items():
        key = f"network.transformers.{name}"
        x = _field(spec, 'x', key)
        r_w = spec.get('r_w', 0.0)
        ratio = spec.get('ratio', 1.0)
        _require(validate_positive(x, f"{key}.x"), f"{key}.x")
        _require(validate_non_negative(r_w, f"{key}.r_w"), f"{key}.r_w")
        _require(validate_positive(ratio, f"{key}.ratio"), f"{key}.ratio")
        graph.transformers.append(Transformer(
            name=name,
            from_bus=bus_ref(_field(spec, 'from', key), f"{key}.from"),
            to_bus=bus_ref(_field(spec, 'to', key), f"{key}.to"),
            l_leak=float(x) / OMEGA_BASE, r_w=float(r_w), ratio=float(ratio),
        ))

    for name, spec in _public(data.get('loads') or {}).items():
        key = f"network.loads.{name}"
        p = spec.get('p', 0.0)
        q = spec.get('q', 0.0)
        _require(validate_non_negative(p, f"{key}.p"), f"{key}.p")
        # Capacitive loads would need a negative inductance branch.
        _require(validate_non_negative(q, f"{key}.q"), f"{key}.q")
        graph.loads.append(Load(name=name, bus=bus_ref(_field(spec, 'bus', key), f"{key}.bus"),
                                p=float(p), q=float(q)))

    for name, spec in _public(data.get('machines') or {}).items():
        key = f"network.machines.{name}"
        sm = SyncMachine(name=name, bus=bus_ref(_field(spec, 'bus', key), f"{key}.bus"))
        for attr in ('inertia_h', 'x_t', 'e_mag', 'governor_droop'):
            value = spec.get(attr, getattr(sm, attr))
            _require(validate_positive(value, f"{key}.{attr}"), f"{key}.{attr}")
            setattr(sm, attr, float(value))
        for attr in ('d_damp', 'r_s'):
            value = spec.get(attr, getattr(sm, attr))
            _require(validate_non_negative(value, f"{key}.{attr}"), f"{key}.{attr}")
            setattr(sm, attr, float(value))
        graph.machines.append(sm)

    for name, spec in _public(data.get('gfcs') or {}).items():
        key = f"network.gfcs.{name}"
        graph.gfc_buses[name] = bus_ref(_field(spec, 'bus', key), f"{key}.bus")

    for load in graph.loads:
        buses[load.bus].attached.append(load.name)
    for sm in graph.machines:
        buses[sm.bus].attached.append(sm.name)
    for name, bus_id in graph.gfc_buses.items():
        buses[bus_id].attached.append(name)
    return graph


def resolve_network_path(reference: str, relative_to: Optional[Path] = None) -> Path:
    """Locate a network file next to the scenario, then under GFCSIM_SCENARIO_DIR."""
    candidates = []
    if relative_to is not None:
        candidates.append(Path(relative_to) / reference)
    candidates.append(Path(GFCSIM_SCENARIO_DIR) / reference)
    candidates.append(Path(__file__).resolve().parents[2] / 'scenarios' / reference)
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise ConfigurationError(f"Network file '{reference}' not found", key='network_file')


def load_network_data(path: Path) -> Dict[str, Any]:
    try:
        with open(path, encoding='utf-8') as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Invalid JSON in {path}: {exc.msg}", line=exc.lineno) from exc


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any], prefix: str = '') -> Dict[str, Any]:
    """
    Return a copy of a description tree with dotted-path overrides applied.

    Every path must name an existing leaf.

    Raises:
        ConfigurationError: If a path does not exist.
    """
    result = copy.deepcopy(dict(data))
    for path, value in overrides.items():
        set_path(result, path, value, prefix=prefix)
    return result


def build_ieee9(overrides: Optional[Mapping[str, Any]] = None) -> NetworkGraph:
    """
    Build the nine-bus test system with one machine and two grid-forming converters.

    Args:
        overrides: Dotted-path parameter overrides, e.g. ``{'lines.4-5.x': 0.09}``

    Returns:
        The validated NetworkGraph.
    """
    data = load_network_data(resolve_network_path(IEEE9_NETWORK_FILE))
    if overrides:
        data = apply_overrides(data, overrides, prefix='network')
    return network_from_dict(data)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

class CompiledNetwork:
    """
    Index arrays and parameters of a NetworkGraph, ordered by sorted bus id.

    Series elements are the lines followed by the transformers. Extra shunt
    capacitance (converter filter capacitors) is added per bus.
    """

    def __init__(self, graph: NetworkGraph, extra_capacitance: Optional[Mapping[str, float]] = None):
        self.graph = graph
        self.bus_ids = graph.sorted_bus_ids()
        self.bus_index = {bus_id: k for k, bus_id in enumerate(self.bus_ids)}
        n_bus = len(self.bus_ids)

        series = [(b.name, b.from_bus, b.to_bus, b.r, b.l, 1.0) for b in graph.branches]
        series += [(t.name, t.from_bus, t.to_bus, t.r_w, t.l_leak, t.ratio) for t in graph.transformers]
        self.series_names = [s[0] for s in series]
        self.from_idx = np.array([self.bus_index[s[1]] for s in series], dtype=int)
        self.to_idx = np.array([self.bus_index[s[2]] for s in series], dtype=int)
        self.r = np.array([s[3] for s in series], dtype=float)
        self.l = np.array([s[4] for s in series], dtype=float)
        self.ratio = np.array([s[5] for s in series], dtype=float)

        c_bus = np.zeros(n_bus)
        for bus_id, bus in graph.buses.items():
            c_bus[self.bus_index[bus_id]] += bus.b_shunt / OMEGA_BASE
        for branch in graph.branches:
            half = 0.5 * branch.b_shunt / OMEGA_BASE
            c_bus[self.bus_index[branch.from_bus]] += half
            c_bus[self.bus_index[branch.to_bus]] += half
        for bus_id, c_extra in (extra_capacitance or {}).items():
            c_bus[self.bus_index[bus_id]] += c_extra
        bare = [self.bus_ids[k] for k in np.flatnonzero(c_bus <= 0.0)]
        if bare:
            raise ConfigurationError(
                f"Bus(es) {', '.join(bare)} have no shunt capacitance; add b_shunt",
                key=f"network.buses.{bare[0]}.b_shunt",
            )
        self.c_bus = c_bus

        self.load_names = [load.name for load in graph.loads]
        self.load_idx = np.array([self.bus_index[load.bus] for load in graph.loads], dtype=int)
        self.refresh_loads()

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_series(self) -> int:
        return len(self.series_names)

    @property
    def n_load(self) -> int:
        return len(self.load_names)

    def refresh_loads(self) -> None:
        """Re-read load admittances after an event."""
        self.g = np.array([load.g for load in self.graph.loads], dtype=float)
        self.b_l = np.array([load.b_l for load in self.graph.loads], dtype=float)

    def derivatives(self, v_bus: np.ndarray, i_series: np.ndarray, i_load: np.ndarray,
                    injections: np.ndarray) -> NetworkDerivatives:
        """
        Incidence-form right-hand side. All arrays are (count, 2) in alpha/beta.

            l di/dt   = v_from / ratio - v_to - r i
            c dv/dt   = injection + sum(i into bus) - g v - i_load
            di_load/dt = omega_b b_l v
        """
        ratio = self.ratio[:, None]
        balance = np.array(injections, dtype=float, copy=True)
        np.add.at(balance, self.from_idx, -i_series / ratio)
        np.add.at(balance, self.to_idx, i_series)
        if self.n_load:
            np.add.at(balance, self.load_idx, -(self.g[:, None] * v_bus[self.load_idx] + i_load))
        dv = balance / self.c_bus[:, None]
        di = (v_bus[self.from_idx] / ratio - v_bus[self.to_idx] - self.r[:, None] * i_series) / self.l[:, None]
        dl = OMEGA_BASE * self.b_l[:, None] * v_bus[self.load_idx] if self.n_load else np.zeros((0, 2))
        return NetworkDerivatives(dv, di, dl)

    def state_matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Linear state-space form of :meth:`derivatives`.

        The state is ``[v_bus, i_series, i_load]`` with alpha/beta interleaved
        per element; the input is the per-bus injection, interleaved the same way.

        Returns:
            (A, B) dense matrices.
        """
        n, m, k = self.n_bus, self.n_series, self.n_load
        size = n + m + k
        a1 = np.zeros((size, size))
        for e in range(m):
            f, t = self.from_idx[e], self.to_idx[e]
            row = n + e
            a1[f, row] -= 1.0 / self.ratio[e]
            a1[t, row] += 1.0
            a1[row, f] += 1.0 / (self.ratio[e] * self.l[e])
            a1[row, t] -= 1.0 / self.l[e]
            a1[row, row] -= self.r[e] / self.l[e]
        for j in range(k):
            b = self.load_idx[j]
            row = n + m + j
            a1[b, b] -= self.g[j]
            a1[b, row] -= 1.0
            a1[row, b] += OMEGA_BASE * self.b_l[j]
        a1[:n, :] /= self.c_bus[:, None]
        b1 = np.zeros((size, n))
        b1[:n, :n] = np.diag(1.0 / self.c_bus)
        eye2 = np.eye(2)
        return np.kron(a1, eye2), np.kron(b1, eye2)

    def stored_energy(self, v_bus: np.ndarray, i_series: np.ndarray, i_load: np.ndarray) -> float:
        """Energy in bus capacitors, series inductances and load inductances."""
        energy = 0.5 * float(np.sum(self.c_bus[:, None] * v_bus ** 2))
        energy += 0.5 * float(np.sum(self.l[:, None] * i_series ** 2))
        with np.errstate(divide='ignore'):
            l_load = np.where(self.b_l > 0.0, 1.0 / (OMEGA_BASE * self.b_l), 0.0)
        energy += 0.5 * float(np.sum(l_load[:, None] * i_load ** 2))
        return energy

    def resistive_losses(self, i_series: np.ndarray) -> float:
        return float(np.sum(self.r[:, None] * i_series ** 2))

    def load_power(self, v_bus: np.ndarray, i_load: np.ndarray) -> float:
        """Active power drawn by the loads (conductance part)."""
        if not self.n_load:
            return 0.0
        v = v_bus[self.load_idx]
        return float(np.sum(self.g[:, None] * v ** 2))


def network_derivatives(graph: NetworkGraph, injections: np.ndarray, v_bus: np.ndarray,
                        i_series: np.ndarray, i_load: Optional[np.ndarray] = None,
                        extra_capacitance: Optional[Mapping[str, float]] = None) -> NetworkDerivatives:
    """
    Branch, load and bus-voltage derivatives of a graph for given states and
    per-bus current injections (rows in sorted bus order).
    """
    compiled = CompiledNetwork(graph, extra_capacitance)
    if i_load is None:
        i_load = np.zeros((compiled.n_load, 2))
    return compiled.derivatives(np.asarray(v_bus, dtype=float), np.asarray(i_series, dtype=float),
                                np.asarray(i_load, dtype=float), np.asarray(injections, dtype=float))


# ---------------------------------------------------------------------------
# Synchronous machine
# ---------------------------------------------------------------------------

class SmDerivatives(NamedTuple):
    delta_dot: float
    omega_dot: float
    i_ab_dot: Vec2
    i_injected: Vec2
    p_elec: float


def sm_emf(sm: SyncMachine, theta_ref: float, delta: Optional[float] = None) -> Vec2:
    angle = theta_ref + (sm.delta if delta is None else delta)
    return (sm.e_mag * math.cos(angle), sm.e_mag * math.sin(angle))


def sm_phasor_current(sm: SyncMachine, terminal_v: complex, delta: Optional[float] = None) -> complex:
    """Quasi-static stator current (E - V) / (r_s + j x_t) with both phasors in one frame."""
    e = sm.e_mag * complex(math.cos(sm.delta if delta is None else delta),
                           math.sin(sm.delta if delta is None else delta))
    return (e - terminal_v) / complex(sm.r_s, sm.x_t)


def sm_derivatives(sm: SyncMachine, terminal_v_ab: Vec2, omega_ref: float,
                   i_ab: Vec2 = (0.0, 0.0), theta_ref: float = 0.0,
                   delta: Optional[float] = None, omega_m: Optional[float] = None) -> SmDerivatives:
    """
    Classical machine: swing equation, droop governor and stator R-L behind the EMF.

        delta_dot = omega_m - omega_ref
        omega_dot = omega_ref / (2H) (p_mech - p_elec - D (omega_m - omega_ref) / omega_ref)
        p_mech    = p_set + (omega_ref - omega_m) / (omega_ref R)
        l_t di/dt = e - v - r_s i

    governor_droop is R in p.u. speed per p.u. power; D is p.u. power per p.u. speed.
    """
    delta = sm.delta if delta is None else delta
    omega_m = sm.omega_m if omega_m is None else omega_m
    e = sm_emf(sm, theta_ref, delta)
    p_elec = e[0] * i_ab[0] + e[1] * i_ab[1]
    speed_dev = (omega_m - omega_ref) / omega_ref
    p_mech = sm.p_set - speed_dev / sm.governor_droop
    omega_dot = omega_ref / (2.0 * sm.inertia_h) * (p_mech - p_elec - sm.d_damp * speed_dev)
    l_t = sm.l_t
    i_dot = (
        (e[0] - terminal_v_ab[0] - sm.r_s * i_ab[0]) / l_t,
        (e[1] - terminal_v_ab[1] - sm.r_s * i_ab[1]) / l_t,
    )
    return SmDerivatives(omega_m - omega_ref, omega_dot, i_dot, (i_ab[0], i_ab[1]), p_elec)


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

def apply_event(graph: NetworkGraph, event: LoadStepEvent) -> bool:
    """
    Re-size the load at the event bus from its post-event power at nominal voltage.

    Returns:
        True if an admittance changed.

    Raises:
        ConfigurationError: If the bus carries no load or several loads.
    """
    loads = graph.loads_at(str(event.bus))
    if len(loads) != 1:
        raise ConfigurationError(
            f"Load step at bus {event.bus} needs exactly one load there, found {len(loads)}",
            key='events',
        )
    load = loads[0]
    q_after = load.q if event.q_after is None else event.q_after
    if not math.isclose(load.p, event.p_before, abs_tol=1e-12):
        logger.warning("Load %s is at p=%.4f, event expected p_before=%.4f",
                       load.name, load.p, event.p_before)
    if event.p_after == load.p and q_after == load.q:
        return False
    load.p = float(event.p_after)
    load.q = float(q_after)
    logger.info("t=%.6f s: load %s at bus %s stepped to p=%.4f q=%.4f",
                event.t_event, load.name, load.bus, load.p, load.q)
    return True
