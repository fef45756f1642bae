"""
Handler for the ``plot`` verb: SVG panels from an existing waveforms.csv.
"""
import logging
from pathlib import Path
from typing import Any, Dict

from handlers.request import RunRequest
from utils.errors import ConfigurationError, SimulationError
from utils.report_helpers import EXIT_CONFIG_ERROR, create_error_report, create_success_report
from utils.svg_plots import plot_waveforms as render_waveforms
from utils.waveform_io import read_waveforms

logger = logging.getLogger(__name__)


def plot_waveforms(request: RunRequest) -> Dict[str, Any]:
    """
    Render the requested channels of a waveform CSV.

    Without a channel list every channel is plotted. Panels go to the output
    directory, or next to the CSV when none is given.
    """
    try:
        if request.csv_path is None:
            raise ConfigurationError("plot needs a waveform CSV")
        log = read_waveforms(request.csv_path)
        out_dir = Path(request.output_dir) if request.output_dir else Path(request.csv_path).parent
        paths = render_waveforms(log, out_dir, request.channels)
    except SimulationError as exc:
        logger.error(exc.message)
        return create_error_report(EXIT_CONFIG_ERROR, exc.message, exc.code)

    return create_success_report({'panels': [str(p) for p in paths]},
                                 message=f"Wrote {len(paths)} panel(s)")
