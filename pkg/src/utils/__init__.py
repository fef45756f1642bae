# Utils Package
from .errors import SimulationError, ConfigurationError, IntegrationFault, ControllerFault
from .validators import validate_number, validate_positive, validate_channels
