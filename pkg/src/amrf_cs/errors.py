"""Exception types shared across the package."""


class AmrfError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(AmrfError, ValueError):
    pass


class UndefinedSNRError(AmrfError, ValueError):
    pass


class CapacityError(AmrfError, ValueError):
    pass


class InvalidBasisError(AmrfError, ValueError):
    pass


class ConfigError(AmrfError, ValueError):
    pass


class NumericError(AmrfError, ArithmeticError):
    pass
