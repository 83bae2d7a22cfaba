"""Exception types shared across the package.

Two failure families are distinguished so that callers (and the command
line tool) can map them to distinct exit codes: problems with input data
(malformed files, inconsistent shapes, bad masks) and problems arising
during numerical work (non-finite likelihoods, singular updates, failed
step-size searches).
"""


class PseudoCtError(Exception):
    """Base class for all package-specific errors."""


class DataError(PseudoCtError):
    """Raised when input data is malformed or internally inconsistent."""


class NumericalError(PseudoCtError):
    """Raised when an algorithm fails numerically (NaN, singularity, ...)."""
