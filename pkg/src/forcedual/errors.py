"""Exception taxonomy shared across the toolkit.

The CLI maps these onto process exit codes, so every failure raised out of
library code should be one of the types below (or a subclass).
"""


class ForceDualError(Exception):
    """Base class for all toolkit errors."""


class InputError(ForceDualError):
    """Bad user input: unreadable files, malformed configs, invalid indices."""


class MeshError(InputError):
    """Mesh fails validation (parse error, inverted elements, bad surface)."""

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = list(offending) if offending is not None else []


class NumericalError(ForceDualError):
    """Numerical failure: factorization breakdown, eigensolver non-convergence."""


class ValidationError(ForceDualError):
    """An acceptance/validation threshold was not met."""
