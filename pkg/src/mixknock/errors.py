"""Exception hierarchy shared by all modules."""


class MixKnockError(Exception):
    """Base class for package errors."""


class InputError(MixKnockError, ValueError):
    """Malformed user input (bad shapes, missing columns, bad flags)."""


class DimensionMismatch(InputError):
    pass


class NumericalError(MixKnockError):
    """Base class for failures of a numerical routine."""


class NotPositiveDefinite(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class DegenerateFit(NumericalError):
    pass


class CollinearityError(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass
