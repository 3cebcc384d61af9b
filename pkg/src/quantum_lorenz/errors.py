"""Exception hierarchy shared by the library and the command-line front end."""


class LorenzError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(LorenzError, ValueError):
    pass


class InvalidStateError(LorenzError, ValueError):
    """A phase point contains NaN or infinity."""


class DomainError(LorenzError, ValueError):
    """Evaluation requested outside the span covered by a trajectory."""


class NonConvergenceError(LorenzError, RuntimeError):
    """The adaptive step size fell below ``min_step``.

    ``time`` is the time reached before giving up; ``node`` is the batch row
    with the largest error estimate (``None`` for single trajectories).
    """

    def __init__(self, message, time, node=None):
        super().__init__(message)
        self.time = time
        self.node = node


class StepLimitError(LorenzError, RuntimeError):
    """``max_steps`` was exhausted before reaching the requested time."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class InsufficientDataError(LorenzError, ValueError):
    pass


class InputFileError(LorenzError, OSError):
    """A user-supplied data file is missing or malformed."""
