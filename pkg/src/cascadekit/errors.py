"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures to process status without a lookup table of its own.
"""


class CascadeError(Exception):
    exit_code = 1


class ConfigError(CascadeError):
    exit_code = 1


class AssumptionError(CascadeError):
    exit_code = 2


class AccuracyError(CascadeError):
    exit_code = 3


class FitQualityError(CascadeError):
    exit_code = 4


# polynomial / rational arithmetic
class DegenerateDenominator(CascadeError, ZeroDivisionError):
    pass


class NonRealResidue(CascadeError, ValueError):
    pass


class DegreeTooLarge(CascadeError, ValueError):
    pass


# system level
class NoCharacteristicFunction(AssumptionError):
    pass


class NotEvenOrder(AssumptionError):
    pass


class NotInSpectrum(CascadeError, ValueError):
    pass


class WrongSpace(CascadeError, ValueError):
    pass


class NotInRange(CascadeError, ValueError):
    pass


# spectral
class EmptyBox(CascadeError, ValueError):
    pass


class OnLevelSet(CascadeError, ValueError):
    pass


# semigroup
class TimeNegative(CascadeError, ValueError):
    pass


class EpsilonNonpositive(CascadeError, ValueError):
    pass


class KernelTooLarge(AccuracyError):
    pass


class WindowTooNoisy(FitQualityError):
    pass


# models
class DomainError(CascadeError, ValueError):
    pass


class TooCloseToSpectrum(CascadeError, ValueError):
    pass


class InfiniteM(CascadeError, ValueError):
    pass


class OutOfRange(CascadeError, ValueError):
    pass
