"""Exception hierarchy shared by all modules."""


class SaceError(Exception):
    """Base class for errors raised by sacelab."""


class ConfigError(SaceError):
    """Invalid configuration; carries every violation found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InvalidParameterError(SaceError, ValueError):
    pass


class InvalidPotentialError(SaceError, ValueError):
    pass


class DomainError(SaceError, ValueError):
    pass


class NumericError(SaceError, ArithmeticError):
    """Numerical failure: non-convergence, blow-up, non-finite values."""


class ToleranceError(NumericError):
    pass


class NoInterfaceError(DomainError):
    pass


class NearCausticError(NumericError):
    pass


class InstabilityError(NumericError):
    pass


class RungRefinementError(NumericError):
    pass


class BoxTooSmallError(NumericError):
    pass
