"""Exception types shared across the package.

The CLI maps each class onto a process exit code, so solver code raises
these instead of bare ``ValueError``/``RuntimeError`` where the distinction
matters to a caller.
"""


class DmptError(Exception):
    """Base class for all package errors."""


class InputError(DmptError, ValueError):
    """Malformed or inconsistent user input (files, parameters)."""


class ConvergenceError(DmptError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The best iterate and its residual are kept so callers can decide
    whether the answer is usable anyway.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class InfeasibleError(DmptError):
    """No allocation satisfies the constraints."""


class OracleGuardError(DmptError):
    """Exhaustive enumeration refused because the search space is too large."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count
