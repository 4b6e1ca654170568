"""Exception types shared across the package."""


class StageShapeError(Exception):
    """Base class for package errors."""


class ConfigurationError(StageShapeError, ValueError):
    """Invalid configuration (environment, budget, experiment file)."""


class ContractViolation(StageShapeError):
    """A caller broke an operation's precondition."""


class IntegrityError(StageShapeError):
    """A stored artifact failed its fingerprint check or could not be decoded."""
