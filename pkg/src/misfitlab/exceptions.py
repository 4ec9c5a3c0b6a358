"""Exception hierarchy shared by every module."""


class MisfitLabError(Exception):
    """Base class for all errors raised by misfitlab."""


class InvalidParameters(MisfitLabError, ValueError):
    pass


class SeparationViolation(MisfitLabError, ValueError):
    pass


class OutOfRange(MisfitLabError, ValueError):
    pass


class DegenerateSegment(MisfitLabError, ValueError):
    pass


class BudgetExceeded(MisfitLabError, RuntimeError):
    pass


class TooShort(MisfitLabError, ValueError):
    pass


class Infeasible(MisfitLabError, ValueError):
    pass


class NoConvergence(MisfitLabError, RuntimeError):
    pass


class SlopeTooSteep(MisfitLabError, ValueError):
    pass


class CutoffTooLarge(MisfitLabError, ValueError):
    pass


class CoincidentPoints(MisfitLabError, ValueError):
    pass


class OnBoundary(MisfitLabError, ValueError):
    pass


class BadK(MisfitLabError, ValueError):
    pass


class CutoffViolation(MisfitLabError, ValueError):
    pass


class BadManifest(MisfitLabError, ValueError):
    pass


class UnknownKind(MisfitLabError, ValueError):
    pass
