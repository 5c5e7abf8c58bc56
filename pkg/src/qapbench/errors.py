"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit with 2,
verification failures with 3, everything else with 1.
"""


class QapBenchError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(QapBenchError):
    """Invalid configuration: bad dimensions, malformed files, unknown keys."""


class StateError(QapBenchError):
    """An allocation state is inconsistent with its instance (index out of range)."""


class InfeasibleInstanceError(QapBenchError):
    """No feasible allocation exists (total capacity below the phone count)."""


class InstanceTooLargeError(QapBenchError):
    """Exact enumeration was requested beyond its size bound."""


class TrainingError(QapBenchError):
    """Training failed in a way that invalidates the run (non-finite gradients)."""


class VerificationError(QapBenchError):
    """A verification property failed."""
