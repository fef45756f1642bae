"""
Exception types raised by the simulator.

Every error carries a machine-readable ``code`` that the command handlers put
into error reports, next to the human-readable message.
"""
from typing import Optional


class SimulationError(Exception):
    """Base class for all simulator errors."""

    code = 'SIMULATION_ERROR'

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(SimulationError):
    """Invalid scenario, network description or override."""

    code = 'CONFIG_ERROR'

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.key = key
        self.line = line


class IntegrationFault(SimulationError):
    """A derivative or state became non-finite during integration."""

    code = 'INTEGRATION_FAULT'

    def __init__(self, message: str, index: Optional[int] = None, state_name: Optional[str] = None):
        super().__init__(message)
        self.index = index
        self.state_name = state_name


class ControllerFault(SimulationError):
    """A controller reached a state where its law is undefined."""

    code = 'CONTROLLER_FAULT'
