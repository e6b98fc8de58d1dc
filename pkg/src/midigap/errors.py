"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failure classes to
distinct process exit statuses.
"""


class MidigapError(Exception):
    exit_code = 1


class SpecMismatchError(MidigapError, ValueError):
    exit_code = 4


class AntipodalError(MidigapError, ValueError):
    """Logarithmic map requested between rotations that are 180 degrees apart."""

    exit_code = 4


class InsufficientDemosError(MidigapError, ValueError):
    exit_code = 3


class ConvergenceError(MidigapError, RuntimeError):
    """An iterative estimator hit its iteration cap.

    ``last`` holds the final iterate so callers can still inspect it.
    """

    exit_code = 6

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class ClusteringError(MidigapError, RuntimeError):
    exit_code = 6


class InfeasibleEvidenceError(MidigapError, RuntimeError):
    exit_code = 5


class InfeasibleChainError(InfeasibleEvidenceError):
    pass


class InfeasiblePathError(MidigapError, RuntimeError):
    """Path optimization terminated with constraint violations above tolerance."""

    exit_code = 5

    def __init__(self, message, max_violation=float("nan"), result=None):
        super().__init__(message)
        self.max_violation = max_violation
        self.result = result


class IKNotConvergedError(MidigapError, RuntimeError):
    exit_code = 6

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class FileFormatError(MidigapError, ValueError):
    """Unreadable artifact: bad header, unknown schema version or wrong kind."""

    exit_code = 2


class UsageError(MidigapError, ValueError):
    exit_code = 2
