"""
Configuration settings for the grid-forming converter simulator.
"""
import math
import os

# Load environment variables from .env file
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # python-dotenv not installed, use system env vars

# Runtime configuration
GFCSIM_THREADS = int(os.environ.get('GFCSIM_THREADS', str(os.cpu_count() or 1)))
GFCSIM_LOG_LEVEL = os.environ.get('GFCSIM_LOG_LEVEL', 'INFO')
GFCSIM_SCENARIO_DIR = os.environ.get('GFCSIM_SCENARIO_DIR', 'scenarios')

# Per-unit bases (IEEE-9 test system)
S_BASE_VA = 100e6
V_BASE_V = 230e3
F_BASE_HZ = 50.0
OMEGA_BASE = 2 * math.pi * F_BASE_HZ

# Integration
DEFAULT_DT = 20e-6
DEFAULT_T_END = 10.0
DEFAULT_PREROLL = 0.5
DEFAULT_LOG_DECIMATION = 50

# Diagnostics
DEFAULT_COLLAPSE_THRESHOLD = 0.7
DEFAULT_SETTLING_BAND = 0.05
FREQUENCY_SETTLING_BAND = 0.005
SATURATION_TOLERANCE = 1e-6
FREQUENCY_SPREAD_WINDOW = 1.0

# Runs stop once v_dc falls to this fraction of its setpoint; the modulator
# is saturated well before it
VDC_FLOOR = 0.5

# Smallest magnitudes accepted before a division is treated as degenerate
DVOC_MIN_MAGNITUDE = 1e-6
MODULATION_MIN_VDC = 1e-3

# Output files
WAVEFORMS_FILENAME = 'waveforms.csv'
METRICS_FILENAME = 'metrics.json'
RESOLVED_FILENAME = 'resolved.json'
SWEEP_SUMMARY_FILENAME = 'sweep_summary.csv'
TIME_COLUMN = 't_s'
