class ConfigurationError(ValueError):
    """Invalid vehicle, scenario or suite configuration."""


class DomainError(ValueError):
    """Input outside the geometric domain of an operation."""


class SimulationFault(RuntimeError):
    """Integration produced a non-finite state."""
