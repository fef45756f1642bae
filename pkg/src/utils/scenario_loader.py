"""
Scenario files: parsing, defaults, overrides and provenance.

A scenario is a JSON key-tree. Converter settings shared by all converters go
under ``gfc_defaults`` and are merged into each entry of ``gfcs``; converters
are the ones attached in the network description. Overrides are
``dotted.path=value`` strings; a leading converter name is shorthand for
``gfcs.<name>``.

The fully resolved tree is written as ``resolved.json`` together with a
provenance tag per leaf (paper, default or override). That file is itself a
loadable scenario.
"""
import fnmatch
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from config import (
    DEFAULT_COLLAPSE_THRESHOLD,
    DEFAULT_DT,
    DEFAULT_LOG_DECIMATION,
    DEFAULT_PREROLL,
    DEFAULT_SETTLING_BAND,
    DEFAULT_T_END,
    F_BASE_HZ,
    OMEGA_BASE,
    S_BASE_VA,
    V_BASE_V,
)
from core.controllers import (
    DVOC_PHASE_LAWS,
    Droop,
    Dvoc,
    InnerLoopConfig,
    OuterControllerConfig,
    Setpoints,
    Vsg,
)
from core.converter import ConverterParams
from core.engine import Bases, GfcConfig, Scenario
from core.network import (
    LoadStepEvent,
    apply_overrides,
    load_network_data,
    network_from_dict,
    resolve_network_path,
)
from utils.errors import ConfigurationError
from utils.key_tree import (
    deep_merge,
    get_path,
    iter_leaves,
    parse_assignment,
    set_path,
    strip_comments,
    unknown_keys,
)
from utils.validators import (
    validate_bool,
    validate_choice,
    validate_fraction,
    validate_non_negative,
    validate_number,
    validate_open_fraction,
    validate_override,
    validate_positive,
    validate_positive_int,
)

logger = logging.getLogger(__name__)

PAPER = 'paper'
DEFAULT = 'default'
OVERRIDE = 'override'
PROVENANCE_TAGS = (PAPER, DEFAULT, OVERRIDE)

CONTROLLER_KINDS = ('droop', 'vsg', 'dvoc')

GFC_TEMPLATE: Dict[str, Any] = {
    'converter': {
        'c_dc': 0.05,
        'g_dc': 0.001,
        'x_f': 0.1,
        'b_f': 0.05,
        'r_f': 0.005,
        'i_dc_max': 0.2845,
        'v_dc_ref': 2.5,
        'k_dc': 5.0,
        'tau_dc': 0.03,
    },
    'controller': {
        'kind': 'vsg',
        'alpha': 0.5,
        'dc_feedback': True,
        'omega_f': 2 * math.pi * 10.0,
        'setpoints': {'p_ref': 0.25, 'q_ref': 0.0, 'v_ref': 1.0},
        'droop': {'d_omega': 2 * math.pi * 0.05},
        'vsg': {'J': 2.0e3, 'D_p': 1.0e5},
        'dvoc': {'eta': 0.021, 'mu': 6.66e4, 'kappa': math.pi / 2, 'phase_law': 'consistent'},
    },
    'inner_loop': {
        'kp_v': 2.0,
        'ki_v': 40.0,
        'kp_i': 1.0,
        'ki_i': 10.0,
        'i_ac_max': 1.2,
        'ac_limit': False,
        'decoupling': True,
        'integrator_limit': 2.0,
    },
}

DEFAULT_TREE: Dict[str, Any] = {
    'name': 'scenario',
    'description': '',
    'bases': {'s_base_va': S_BASE_VA, 'v_base_v': V_BASE_V, 'f_base_hz': F_BASE_HZ},
    'simulation': {
        't_end': DEFAULT_T_END,
        'dt': DEFAULT_DT,
        'log_decimation': DEFAULT_LOG_DECIMATION,
        'preroll': DEFAULT_PREROLL,
        'collapse_threshold': DEFAULT_COLLAPSE_THRESHOLD,
        'settling_band': DEFAULT_SETTLING_BAND,
    },
    'gfc_defaults': GFC_TEMPLATE,
    'gfcs': {},
    'events': [],
    'network_overrides': {},
}

EVENT_FIELDS = ('t_event', 'bus', 'p_before', 'p_after', 'q_after')
TOP_LEVEL_EXTRA = ('network', 'network_file', 'provenance')
DEFAULT_NETWORK_FILE = 'networks/ieee9.json'

PAPER_PATTERNS = (
    'bases.*',
    'gfcs.*.controller.droop.d_omega',
    'gfcs.*.controller.vsg.J',
    'gfcs.*.controller.vsg.D_p',
    'gfcs.*.controller.dvoc.eta',
    'gfcs.*.controller.dvoc.mu',
    'gfcs.*.controller.dvoc.kappa',
)

Override = Union[str, Tuple[str, Any]]


@dataclass
class ResolvedScenario:
    tree: Dict[str, Any]
    provenance: Dict[str, str]
    scenario: Scenario
    source: Optional[Path] = None

    def document(self) -> Dict[str, Any]:
        """The resolved.json payload."""
        return {'scenario': self.tree, 'provenance': self.provenance}


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def read_json(path: Union[str, Path]) -> Any:
    """
    Read a JSON file, reporting syntax errors with their line number.

    Raises:
        ConfigurationError: If the file is missing or not valid JSON.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigurationError(f"Cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Syntax error in {path.name}: {exc.msg}", line=exc.lineno) from exc


def _normalize_overrides(overrides: Iterable[Override]) -> List[Tuple[str, Any]]:
    pairs = []
    for item in overrides:
        if isinstance(item, str):
            ok, err = validate_override(item)
            if not ok:
                raise ConfigurationError(err, key=item)
            pairs.append(parse_assignment(item))
        else:
            key, value = item
            pairs.append((str(key), value))
    return pairs


def _qualify(path: str, gfc_names: Sequence[str]) -> str:
    head = path.split('.', 1)[0]
    return f"gfcs.{path}" if head in gfc_names else path


def _check_schema(raw: Mapping[str, Any]) -> None:
    allowed = dict(DEFAULT_TREE)
    allowed.update({k: None for k in TOP_LEVEL_EXTRA})
    for key in raw:
        if key not in allowed:
            raise ConfigurationError(f"Unknown scenario key '{key}'", key=key)
    for section in ('bases', 'simulation', 'gfc_defaults'):
        if section in raw:
            if not isinstance(raw[section], Mapping):
                raise ConfigurationError(f"'{section}' must be a mapping", key=section)
            bad = unknown_keys(raw[section], DEFAULT_TREE[section], section)
            if bad:
                raise ConfigurationError(f"Unknown scenario key '{bad[0]}'", key=bad[0])
    for name, spec in (raw.get('gfcs') or {}).items():
        if not isinstance(spec, Mapping):
            raise ConfigurationError(f"'gfcs.{name}' must be a mapping", key=f"gfcs.{name}")
        bad = unknown_keys(spec, GFC_TEMPLATE, f"gfcs.{name}")
        if bad:
            raise ConfigurationError(f"Unknown scenario key '{bad[0]}'", key=bad[0])
    events = raw.get('events', [])
    if not isinstance(events, list):
        raise ConfigurationError("'events' must be a list", key='events')
    for k, event in enumerate(events):
        if not isinstance(event, Mapping):
            raise ConfigurationError(f"'events.{k}' must be a mapping", key=f"events.{k}")
        for key in event:
            if key not in EVENT_FIELDS:
                raise ConfigurationError(f"Unknown scenario key 'events.{k}.{key}'", key=f"events.{k}.{key}")


def _load_network(raw: Mapping[str, Any], base_dir: Optional[Path]) -> Dict[str, Any]:
    if 'network' in raw:
        data = raw['network']
    else:
        reference = raw.get('network_file', DEFAULT_NETWORK_FILE)
        data = load_network_data(resolve_network_path(reference, base_dir))
    data = strip_comments(data)
    overrides = raw.get('network_overrides') or {}
    if overrides:
        data = apply_overrides(data, overrides, prefix='network')
    return data


def _fill_events(tree: Dict[str, Any]) -> None:
    loads = tree['network'].get('loads', {})
    for k, event in enumerate(tree['events']):
        for required in ('t_event', 'bus', 'p_after'):
            if required not in event:
                raise ConfigurationError(f"Missing required field 'events.{k}.{required}'",
                                         key=f"events.{k}.{required}")
        if 'p_before' not in event:
            at_bus = [load for load in loads.values() if str(load.get('bus')) == str(event['bus'])]
            event['p_before'] = at_bus[0].get('p', 0.0) if at_bus else 0.0
        event.setdefault('q_after', None)


def _file_provenance(raw_prov: Any) -> Dict[str, str]:
    if raw_prov is None:
        return {}
    if not isinstance(raw_prov, Mapping):
        raise ConfigurationError("'provenance' must be a mapping", key='provenance')
    result = {}
    for path, tag in raw_prov.items():
        ok, err = validate_choice(tag, PROVENANCE_TAGS, f"provenance.{path}")
        if not ok:
            raise ConfigurationError(err, key=f"provenance.{path}")
        if path.startswith('gfc_defaults.'):
            path = 'gfcs.*.' + path[len('gfc_defaults.'):]
        result[path] = tag
    return result


def _reference_value(path: str) -> Any:
    parts = path.split('.')
    if parts[0] == 'bases':
        return DEFAULT_TREE['bases'].get(parts[1])
    if parts[0] == 'gfcs' and len(parts) > 3:
        rest = parts[2:]
        try:
            return get_path(GFC_TEMPLATE, '.'.join(rest))
        except ConfigurationError:
            return None
    return None


def build_provenance(tree: Mapping[str, Any], file_tags: Mapping[str, str],
                     overridden: Iterable[str]) -> Dict[str, str]:
    """Tag every leaf of a resolved tree; overrides win over file tags, which win over built-ins."""
    overridden = set(overridden)
    provenance: Dict[str, str] = {}
    for path, value in iter_leaves(tree):
        if path in overridden:
            provenance[path] = OVERRIDE
            continue
        tagged = [tag for pattern, tag in file_tags.items() if fnmatch.fnmatchcase(path, pattern)]
        if tagged:
            provenance[path] = tagged[-1]
        elif any(fnmatch.fnmatchcase(path, p) for p in PAPER_PATTERNS) and value == _reference_value(path):
            provenance[path] = PAPER
        else:
            provenance[path] = DEFAULT
    return provenance


def resolve_tree(raw: Any, overrides: Iterable[Override] = (), base_dir: Optional[Path] = None
                 ) -> Tuple[Dict[str, Any], Dict[str, str]]:
    """
    Merge defaults, the network description and overrides into one resolved tree.

    Returns:
        (resolved tree, provenance map)
    """
    if not isinstance(raw, Mapping):
        raise ConfigurationError("Scenario must be a JSON object")
    if set(raw) == {'scenario', 'provenance'}:
        file_tags = _file_provenance(raw['provenance'])
        raw = raw['scenario']
    else:
        file_tags = _file_provenance(raw.get('provenance'))
    raw = strip_comments({k: v for k, v in raw.items() if k != 'provenance'})
    _check_schema(raw)

    tree = deep_merge(DEFAULT_TREE, {k: v for k, v in raw.items() if k not in TOP_LEVEL_EXTRA})
    tree['network'] = _load_network(raw, base_dir)
    tree['network_overrides'] = {}
    gfc_names = list(strip_comments(tree['network'].get('gfcs') or {}))
    for name in tree['gfcs']:
        if name not in gfc_names:
            raise ConfigurationError(f"Converter '{name}' is not attached in the network", key=f"gfcs.{name}")

    pairs = [(_qualify(path, gfc_names), value) for path, value in _normalize_overrides(overrides)]
    for path, value in pairs:
        if path.startswith('gfc_defaults.'):
            set_path(tree, path, value)

    defaults = tree.pop('gfc_defaults')
    tree['gfcs'] = {name: deep_merge(defaults, tree['gfcs'].get(name, {})) for name in gfc_names}
    overridden = []
    for path, value in pairs:
        if path.startswith('gfc_defaults.'):
            rest = path[len('gfc_defaults.'):]
            overridden += [f"gfcs.{name}.{rest}" for name in gfc_names]
            continue
        set_path(tree, path, value)
        overridden.append(path)

    _fill_events(tree)
    ordered = {key: tree[key] for key in ('name', 'description', 'bases', 'simulation', 'network',
                                          'network_overrides', 'gfcs', 'events')}
    return ordered, build_provenance(ordered, file_tags, overridden)


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def _check(result: Tuple[bool, Optional[str]], key: str) -> None:
    ok, err = result
    if not ok:
        raise ConfigurationError(err, key=key)


def _build_converter(spec: Mapping[str, Any], key: str) -> ConverterParams:
    for name in ('c_dc', 'x_f', 'b_f', 'i_dc_max', 'v_dc_ref'):
        _check(validate_positive(spec[name], f"{key}.{name}"), f"{key}.{name}")
    for name in ('g_dc', 'r_f', 'k_dc', 'tau_dc'):
        _check(validate_non_negative(spec[name], f"{key}.{name}"), f"{key}.{name}")
    return ConverterParams(
        c_dc=float(spec['c_dc']),
        g_dc=float(spec['g_dc']),
        l_f=float(spec['x_f']) / OMEGA_BASE,
        c_f=float(spec['b_f']) / OMEGA_BASE,
        r_f=float(spec['r_f']),
        i_dc_max=float(spec['i_dc_max']),
        v_dc_ref=float(spec['v_dc_ref']),
        k_dc=float(spec['k_dc']),
        tau_dc=float(spec['tau_dc']),
    )


def _build_controller(spec: Mapping[str, Any], v_dc_ref: float, power_base: float,
                      key: str) -> OuterControllerConfig:
    kind = spec['kind']
    _check(validate_choice(kind, CONTROLLER_KINDS, f"{key}.kind"), f"{key}.kind")
    _check(validate_fraction(spec['alpha'], f"{key}.alpha"), f"{key}.alpha")
    _check(validate_bool(spec['dc_feedback'], f"{key}.dc_feedback"), f"{key}.dc_feedback")
    _check(validate_positive(spec['omega_f'], f"{key}.omega_f"), f"{key}.omega_f")
    sp = spec['setpoints']
    _check(validate_number(sp['p_ref'], f"{key}.setpoints.p_ref"), f"{key}.setpoints.p_ref")
    _check(validate_number(sp['q_ref'], f"{key}.setpoints.q_ref"), f"{key}.setpoints.q_ref")
    _check(validate_positive(sp['v_ref'], f"{key}.setpoints.v_ref"), f"{key}.setpoints.v_ref")

    gains = spec[kind]
    if kind == 'dvoc':
        _check(validate_choice(gains['phase_law'], DVOC_PHASE_LAWS, f"{key}.dvoc.phase_law"),
               f"{key}.dvoc.phase_law")
    for name, value in gains.items():
        if name in ('phase_law', 'kappa'):
            continue
        _check(validate_positive(value, f"{key}.{kind}.{name}"), f"{key}.{kind}.{name}")
    if kind == 'droop':
        law = Droop(d_omega=float(gains['d_omega']))
    elif kind == 'vsg':
        law = Vsg(J=float(gains['J']), D_p=float(gains['D_p']), power_base=power_base)
    else:
        law = Dvoc(eta=float(gains['eta']), mu=float(gains['mu']), kappa=float(gains['kappa']),
                   phase_law=gains['phase_law'])
    setpoints = Setpoints(p_ref=float(sp['p_ref']), q_ref=float(sp['q_ref']), v_ref=float(sp['v_ref']),
                          omega_ref=OMEGA_BASE, v_dc_ref=v_dc_ref)
    return OuterControllerConfig(kind=law, alpha=float(spec['alpha']), setpoints=setpoints,
                                 dc_feedback=spec['dc_feedback'], omega_f=float(spec['omega_f']))


def _build_inner_loop(spec: Mapping[str, Any], key: str) -> InnerLoopConfig:
    for name in ('kp_v', 'ki_v', 'kp_i', 'ki_i'):
        _check(validate_non_negative(spec[name], f"{key}.{name}"), f"{key}.{name}")
    for name in ('i_ac_max', 'integrator_limit'):
        _check(validate_positive(spec[name], f"{key}.{name}"), f"{key}.{name}")
    for name in ('ac_limit', 'decoupling'):
        _check(validate_bool(spec[name], f"{key}.{name}"), f"{key}.{name}")
    return InnerLoopConfig(
        kp_v=float(spec['kp_v']), ki_v=float(spec['ki_v']),
        kp_i=float(spec['kp_i']), ki_i=float(spec['ki_i']),
        i_ac_max=float(spec['i_ac_max']), ac_limit=spec['ac_limit'],
        decoupling=spec['decoupling'], integrator_limit=float(spec['integrator_limit']),
    )


def _build_event(spec: Mapping[str, Any], key: str) -> LoadStepEvent:
    _check(validate_non_negative(spec['t_event'], f"{key}.t_event"), f"{key}.t_event")
    _check(validate_non_negative(spec['p_before'], f"{key}.p_before"), f"{key}.p_before")
    _check(validate_non_negative(spec['p_after'], f"{key}.p_after"), f"{key}.p_after")
    if spec.get('q_after') is not None:
        _check(validate_non_negative(spec['q_after'], f"{key}.q_after"), f"{key}.q_after")
    return LoadStepEvent(
        t_event=float(spec['t_event']), bus=str(spec['bus']),
        p_before=float(spec['p_before']), p_after=float(spec['p_after']),
        q_after=None if spec.get('q_after') is None else float(spec['q_after']),
    )


def build_scenario(tree: Mapping[str, Any]) -> Scenario:
    """
    Validate a resolved tree and build the Scenario.

    Raises:
        ConfigurationError: Naming the first offending key.
    """
    bases = tree['bases']
    for name, value in bases.items():
        _check(validate_positive(value, f"bases.{name}"), f"bases.{name}")
    if bases['f_base_hz'] != F_BASE_HZ:
        raise ConfigurationError(f"bases.f_base_hz must be {F_BASE_HZ:g}", key='bases.f_base_hz')

    sim = tree['simulation']
    _check(validate_non_negative(sim['t_end'], 'simulation.t_end'), 'simulation.t_end')
    _check(validate_positive(sim['dt'], 'simulation.dt'), 'simulation.dt')
    _check(validate_positive_int(sim['log_decimation'], 'simulation.log_decimation'), 'simulation.log_decimation')
    _check(validate_non_negative(sim['preroll'], 'simulation.preroll'), 'simulation.preroll')
    _check(validate_open_fraction(sim['collapse_threshold'], 'simulation.collapse_threshold'),
           'simulation.collapse_threshold')
    _check(validate_positive(sim['settling_band'], 'simulation.settling_band'), 'simulation.settling_band')

    graph = network_from_dict(tree['network'])
    gfcs = []
    for name, spec in tree['gfcs'].items():
        key = f"gfcs.{name}"
        converter = _build_converter(spec['converter'], f"{key}.converter")
        gfcs.append(GfcConfig(
            name=name,
            bus=graph.gfc_buses[name],
            converter=converter,
            controller=_build_controller(spec['controller'], converter.v_dc_ref, float(bases['s_base_va']),
                                         f"{key}.controller"),
            inner_loop=_build_inner_loop(spec['inner_loop'], f"{key}.inner_loop"),
        ))

    events = [_build_event(spec, f"events.{k}") for k, spec in enumerate(tree['events'])]
    for k, event in enumerate(events):
        if event.bus not in graph.buses:
            raise ConfigurationError(f"Event references unknown bus '{event.bus}'", key=f"events.{k}.bus")
        if len(graph.loads_at(event.bus)) != 1:
            raise ConfigurationError(f"Event bus '{event.bus}' must carry exactly one load",
                                     key=f"events.{k}.bus")
    events.sort(key=lambda e: e.t_event)

    return Scenario(
        name=str(tree['name']),
        description=str(tree.get('description', '')),
        network=graph,
        gfcs=gfcs,
        events=events,
        t_end=float(sim['t_end']),
        dt=float(sim['dt']),
        log_decimation=int(sim['log_decimation']),
        bases=Bases(s_base_va=float(bases['s_base_va']), v_base_v=float(bases['v_base_v']),
                    f_base_hz=float(bases['f_base_hz'])),
        preroll=float(sim['preroll']),
        collapse_threshold=float(sim['collapse_threshold']),
        settling_band=float(sim['settling_band']),
    )


def resolve_scenario(path: Union[str, Path], overrides: Iterable[Override] = ()) -> ResolvedScenario:
    """Read, resolve and validate a scenario file."""
    path = Path(path)
    raw = read_json(path)
    tree, provenance = resolve_tree(raw, overrides, base_dir=path.parent)
    scenario = build_scenario(tree)
    logger.info("Loaded scenario '%s' from %s", scenario.name, path)
    return ResolvedScenario(tree=tree, provenance=provenance, scenario=scenario, source=path)


def parse_scenario(path: Union[str, Path], overrides: Iterable[Override] = ()) -> Scenario:
    """
    Parse a scenario file into a validated Scenario.

    Raises:
        ConfigurationError: On syntax errors (with line), unknown or invalid keys.
    """
    return resolve_scenario(path, overrides).scenario
