"""Exception types shared across the package."""


class ItalexError(Exception):
    """Base class for solver errors."""


class InvalidArgument(ItalexError, ValueError):
    pass


class UnsupportedConfiguration(ItalexError):
    """A method was paired with an instance it cannot handle."""


class NumericalInconsistency(ItalexError):
    """An optimality measure or decrease came out clearly negative.

    Round-off below the clamp threshold is silently zeroed; anything larger
    points at a broken oracle (bad projection, wrong Lipschitz constant).
    """


class BudgetExhausted(ItalexError):
    """An iteration cap was hit before a stopping rule fired.

    ``last`` carries the most recent iterate so callers can inspect it.
    """

    def __init__(self, message, last=None, steps=0):
        super().__init__(message)
        self.last = last
        self.steps = steps
