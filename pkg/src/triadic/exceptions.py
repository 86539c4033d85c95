class TriadicError(Exception):
    """Base class for errors raised by this package."""


class InvalidInstance(TriadicError, ValueError):
    pass


class InvalidProbability(TriadicError, ValueError):
    pass


class InvalidPair(TriadicError, ValueError):
    pass


class IllegalEdge(TriadicError, ValueError):
    """Raised when adding an edge that is already present."""


class Stalled(TriadicError):
    """No open triple is left to sample."""


class PhaseError(TriadicError, RuntimeError):
    """A phase-1 operation was requested after phase 2 started."""


class RefusedScale(TriadicError, ValueError):
    """An exhaustive routine was asked to run above its size cap."""


class NoRoot(TriadicError, ValueError):
    pass


class HorizonTooLate(TriadicError, ValueError):
    """The open-triple trajectory reaches zero inside the requested window."""


class AbortNearSingularity(TriadicError, ArithmeticError):
    pass


class ConfigMismatch(TriadicError, ValueError):
    pass


class NotPropagated(TriadicError):
    pass
