"""
Diagnostics computed from a WaveformLog: DC-link collapse, settling, frequency
nadir and spread, and the steady-state power balance.
"""
import itertools
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from config import (
    DEFAULT_COLLAPSE_THRESHOLD,
    FREQUENCY_SETTLING_BAND,
    FREQUENCY_SPREAD_WINDOW,
    SATURATION_TOLERANCE,
)
from core.engine import STATUS_COLLAPSED, RunResult, Scenario, WaveformLog

logger = logging.getLogger(__name__)


@dataclass
class CollapseReport:
    collapsed: bool
    t_collapse: Optional[float]
    min_vdc: float
    saturation_duration: float
    longest_saturation: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SettlingMetrics:
    """settling_time is None when the channel ends outside its band."""

    settling_time: Optional[float]
    overshoot: float
    final_value: float

    @property
    def settled(self) -> bool:
        return self.settling_time is not None

    def to_dict(self) -> dict:
        data = asdict(self)
        data['settled'] = self.settled
        return data


def _crossing(t0: float, t1: float, y0: float, y1: float, level: float) -> float:
    if y1 == y0:
        return t1
    return t0 + (level - y0) * (t1 - t0) / (y1 - y0)


def _saturated_runs(time: np.ndarray, pinned: np.ndarray) -> List[float]:
    """Durations of consecutive pinned stretches, left-rule."""
    steps = np.diff(time)
    runs: List[float] = []
    current = 0.0
    for k, step in enumerate(steps):
        if pinned[k]:
            current += step
        elif current:
            runs.append(current)
            current = 0.0
    if current:
        runs.append(current)
    return runs


def detect_collapse(log: WaveformLog, v_threshold: float = DEFAULT_COLLAPSE_THRESHOLD,
                    i_dc_max: float = 1.2, device: Optional[str] = None) -> CollapseReport:
    """
    Classify DC-link collapse of one converter.

    The DC voltage channel is in p.u. of its setpoint. A collapse is a crossing
    below v_threshold with no recovery above it by the end of the log;
    t_collapse is the interpolated start of that final excursion.

    Args:
        log: Waveforms of one run
        v_threshold: Threshold in (0, 1)
        i_dc_max: DC current limit in the unit of the i_dc channel
        device: Converter name, first converter in the log if omitted
    """
    if not 0.0 < v_threshold < 1.0:
        raise ValueError('v_threshold must lie in (0, 1)')
    if device is None:
        devices = log.devices('v_dc')
        if not devices:
            raise ValueError('Log has no v_dc channel')
        device = devices[0]
    time = log.time
    v_dc = log[f"{device}.v_dc"]
    min_vdc = float(np.min(v_dc))

    pinned = np.zeros(len(time), dtype=bool)
    i_channel = f"{device}.i_dc"
    if i_channel in log.channels:
        pinned = np.abs(log[i_channel]) >= i_dc_max * (1.0 - SATURATION_TOLERANCE)
    runs = _saturated_runs(time, pinned)
    saturation = float(sum(runs))
    longest = float(max(runs)) if runs else 0.0

    if v_dc[-1] >= v_threshold:
        return CollapseReport(False, None, min_vdc, saturation, longest)
    above = np.flatnonzero(v_dc >= v_threshold)
    if len(above) == 0:
        t_collapse = float(time[0])
    else:
        j = int(above[-1])
        t_collapse = float(_crossing(time[j], time[j + 1], v_dc[j], v_dc[j + 1], v_threshold))
    return CollapseReport(True, t_collapse, min_vdc, saturation, longest)


def settling_metrics(time: np.ndarray, channel: np.ndarray, target: float, band_pct: float,
                     t_from: float = 0.0) -> SettlingMetrics:
    """
    Settling time, overshoot and final value of a channel.

    The band is band_pct * |target| around the target (band_pct itself when
    the target is zero). Settling time is the last exit from the band, measured
    from t_from and interpolated between samples.
    """
    if band_pct <= 0:
        raise ValueError('band_pct must be positive')
    time = np.asarray(time, dtype=float)
    channel = np.asarray(channel, dtype=float)
    window = time >= t_from
    t = time[window]
    x = channel[window]
    if len(t) == 0:
        raise ValueError('No samples after t_from')
    band = band_pct * abs(target) if target != 0.0 else band_pct
    error = np.abs(x - target)
    overshoot = float(np.max(error))
    final_value = float(x[-1])
    outside = np.flatnonzero(error > band)
    if len(outside) == 0:
        return SettlingMetrics(0.0, overshoot, final_value)
    j = int(outside[-1])
    if j == len(t) - 1:
        return SettlingMetrics(None, overshoot, final_value)
    t_exit = _crossing(t[j], t[j + 1], error[j], error[j + 1], band)
    return SettlingMetrics(float(t_exit - t_from), overshoot, final_value)


def frequency_nadir(log: WaveformLog, channel: str) -> Dict[str, float]:
    values = log[channel]
    k = int(np.argmin(values))
    return {'t': float(log.time[k]), 'value': float(values[k])}


def frequency_spread(log: WaveformLog, t_from: float = 0.0) -> float:
    """Largest pairwise difference between device frequencies (p.u.) after t_from."""
    names = [name for name in log.channel_names if name.endswith('.omega')]
    window = log.time >= t_from
    spread = 0.0
    for a, b in itertools.combinations(names, 2):
        if np.any(window):
            spread = max(spread, float(np.max(np.abs(log[a][window] - log[b][window]))))
    return spread


def power_balance(log: WaveformLog, index: int = -1) -> Dict[str, float]:
    """
    Generation, load and loss at one sample (the last by default).

    Generation is the sum of every ``<device>.p`` channel at the device terminals.
    """
    generation = sum(float(log[name][index]) for name in log.channel_names if name.endswith('.p'))
    load = float(log['network.p_load'][index])
    losses = float(log['network.p_loss'][index])
    return {
        'generation': generation,
        'load': load,
        'losses': losses,
        'residual': generation - load - losses,
    }


def _event_time(scenario: Scenario) -> float:
    return min((e.t_event for e in scenario.events), default=0.0)


def run_metrics(scenario: Scenario, result: RunResult) -> Dict[str, Any]:
    """
    Metrics of one run as written to metrics.json.

    Collapse reports per converter; settling of each DC voltage (target 1.0)
    and of each frequency channel (target: the common final frequency), both
    measured from the first event; frequency nadirs; frequency spread over the
    final window; power balance and worst switch-power mismatch.
    """
    log = result.log
    t_event = min(_event_time(scenario), float(log.time[-1]))
    collapse = {
        gfc.name: detect_collapse(log, scenario.collapse_threshold, gfc.converter.i_dc_max, gfc.name).to_dict()
        for gfc in scenario.gfcs
    }

    settling: Dict[str, dict] = {}
    for gfc in scenario.gfcs:
        channel = f"{gfc.name}.v_dc"
        settling[channel] = settling_metrics(log.time, log[channel], 1.0, scenario.settling_band,
                                             t_from=t_event).to_dict()
    omega_channels = [name for name in log.channel_names if name.endswith('.omega')]
    if omega_channels:
        common = float(np.mean([log[name][-1] for name in omega_channels]))
        for name in omega_channels:
            settling[name] = settling_metrics(log.time, log[name], common, FREQUENCY_SETTLING_BAND,
                                              t_from=t_event).to_dict()

    balance_channels = [name for name in log.channel_names if name.endswith('.switch_balance')]
    switch_balance = max((float(np.max(np.abs(log[name]))) for name in balance_channels), default=0.0)
    collapsed = result.status == STATUS_COLLAPSED or any(c['collapsed'] for c in collapse.values())

    return {
        'scenario': scenario.name,
        'status': result.status,
        'message': result.message,
        'collapsed': collapsed,
        't_event': t_event,
        't_final': float(log.time[-1]),
        'collapse': collapse,
        'settling': settling,
        'frequency_nadir': {name: frequency_nadir(log, name) for name in omega_channels},
        'frequency_spread': frequency_spread(log, float(log.time[-1]) - FREQUENCY_SPREAD_WINDOW),
        'power_balance': power_balance(log),
        'max_switch_balance': switch_balance,
    }
