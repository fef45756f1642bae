"""
CSV storage of waveform logs.

The first column is the time in seconds, the others are ``<device>.<quantity>``.
Floats are written in their shortest round-trip form and read back with the
round-trip parser, so a write/read cycle reproduces every sample exactly.
"""
import logging
from pathlib import Path
from typing import Union

import pandas as pd

from config import TIME_COLUMN
from core.engine import WaveformLog
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


def write_waveforms(log: WaveformLog, path: Union[str, Path]) -> Path:
    path = Path(path)
    log.to_frame().to_csv(path, index=False, na_rep='nan', lineterminator='\n')
    logger.info("Wrote %d samples x %d channels to %s", len(log), len(log.channels), path)
    return path


def read_waveforms(path: Union[str, Path]) -> WaveformLog:
    """
    Read a waveform CSV written by write_waveforms.

    Raises:
        ConfigurationError: If the file is missing, empty or has no time column.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Waveform file {path} not found", key='csv')
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError as exc:
        raise ConfigurationError(f"Waveform file {path} is empty", key='csv') from exc
    try:
        return WaveformLog.from_frame(frame)
    except ValueError as exc:
        raise ConfigurationError(str(exc), key='csv') from exc
