"""
Deterministic SVG line plots of waveform channels.

One panel (SVG file) per quantity: ``v_dc`` gathers every converter's DC
voltage, ``omega`` every device frequency. Requests may name a quantity or a
full ``<device>.<quantity>`` channel. Output is byte-stable for identical
input: fixed canvas, fixed hash salt, no date metadata, text kept as text.
"""
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib
from matplotlib.figure import Figure

from core.engine import WaveformLog
from utils.errors import ConfigurationError
from utils.validators import validate_channels

logger = logging.getLogger(__name__)

FIGURE_PANELS = ('i_dc', 'v_dc', 'omega', 'p', 'v_mag')
FIGSIZE = (8.0, 3.2)
DPI = 100

SVG_RC = {
    'svg.hashsalt': 'gfcsim',
    'svg.fonttype': 'none',
    'path.simplify': False,
    'font.size': 9,
    'axes.grid': True,
    'grid.alpha': 0.3,
    'lines.linewidth': 1.0,
}

# (axis label, unit)
QUANTITY_LABELS = {
    'v_dc': ('DC voltage', 'p.u. of setpoint'),
    'i_dc': ('DC current', 'p.u.'),
    'i_tau': ('DC current demand', 'p.u.'),
    'omega': ('Frequency', 'p.u.'),
    'p': ('Active power', 'p.u.'),
    'q': ('Reactive power', 'p.u.'),
    'v_mag': ('Voltage amplitude', 'p.u.'),
    'delta': ('Rotor angle', 'rad'),
    'switch_balance': ('Switch power mismatch', 'p.u.'),
    'p_load': ('Load power', 'p.u.'),
    'p_loss': ('Network losses', 'p.u.'),
}


def quantity_of(channel: str) -> str:
    return channel.rsplit('.', 1)[-1]


def select_panels(log: WaveformLog, channels: Optional[Sequence[str]] = None) -> Dict[str, List[str]]:
    """
    Group requested channels into panels keyed by quantity.

    An empty request selects every channel.

    Raises:
        ConfigurationError: Listing the available channels when a request matches nothing.
    """
    available = log.channel_names
    requested = [c.strip() for c in (channels or []) if c.strip()]
    if not requested:
        requested = list(OrderedDict.fromkeys(quantity_of(c) for c in available))

    quantities = list(OrderedDict.fromkeys(quantity_of(c) for c in available))
    ok, err = validate_channels(requested, available + [q for q in quantities if q not in available])
    if not ok:
        raise ConfigurationError(err, key='channels')

    panels: Dict[str, List[str]] = OrderedDict()
    for token in requested:
        matched = [token] if token in available else [c for c in available if quantity_of(c) == token]
        for channel in matched:
            names = panels.setdefault(quantity_of(channel), [])
            if channel not in names:
                names.append(channel)
    return panels


def _axis_label(quantity: str) -> str:
    label, unit = QUANTITY_LABELS.get(quantity, (quantity, 'p.u.'))
    return f"{label} [{unit}]"


def render_panel(log: WaveformLog, quantity: str, channels: Sequence[str], path: Union[str, Path]) -> Path:
    """Write one panel; the DC current panel also shows each converter's demand dashed."""
    path = Path(path)
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=FIGSIZE, dpi=DPI)
        ax = fig.add_subplot(1, 1, 1)
        for channel in channels:
            line, = ax.plot(log.time, log[channel], label=channel)
            if quantity == 'i_dc':
                demand = channel[:-len('i_dc')] + 'i_tau'
                if demand in log.channels:
                    ax.plot(log.time, log[demand], linestyle='--', color=line.get_color(), label=demand)
        ax.set_xlabel('Time [s]')
        ax.set_ylabel(_axis_label(quantity))
        if len(log) > 1:
            ax.set_xlim(float(log.time[0]), float(log.time[-1]))
        ax.legend(loc='best', fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
    logger.info("Wrote panel %s", path)
    return path


def plot_waveforms(log: WaveformLog, out_dir: Union[str, Path],
                   channels: Optional[Sequence[str]] = None) -> List[Path]:
    """Render one SVG per selected quantity into out_dir and return the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [render_panel(log, quantity, names, out_dir / f"{quantity}.svg")
            for quantity, names in select_panels(log, channels).items()]
