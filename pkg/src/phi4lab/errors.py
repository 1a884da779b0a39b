class LabError(Exception):
    """Base class for lab failures."""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ConfigurationError(LabError, ValueError):
    pass


class BlowUpError(LabError, FloatingPointError):
    def __init__(self, message, last_finite_time, replica=None):
        super().__init__(message)
        self.last_finite_time = last_finite_time
        self.replica = replica


class StateError(LabError, RuntimeError):
    pass
