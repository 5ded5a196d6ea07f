"""Exception types shared across the package."""


class SpearError(Exception):
    """Base class for all package errors."""


class ConfigError(SpearError, ValueError):
    """Invalid configuration: unknown key, bad value, or violated bound."""


class ContractViolation(SpearError, RuntimeError):
    """A precondition of an operation was not met."""


class NumericError(ContractViolation, FloatingPointError):
    """Non-finite values where finite ones are required."""


class DegenerateGroupError(ContractViolation):
    """Std normalization requested on a group whose rewards are all equal."""


class CalibrationDeclined(SpearError):
    """Covariance calibration found no signal (all covariances zero)."""
