"""Exception hierarchy shared by all modules."""


class SysIdError(Exception):
    """Base class for every error raised by the package."""


class ParamOutOfDomain(SysIdError, ValueError):
    pass


class DimensionMismatch(SysIdError, ValueError):
    pass


class DerivativeUndefined(SysIdError, ArithmeticError):
    pass


class UnknownPreset(SysIdError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown preset"


class InsufficientData(SysIdError, ValueError):
    pass


class FactorizationFailure(SysIdError, ArithmeticError):
    pass


class NonFiniteValue(SysIdError, ArithmeticError):
    pass


class CacheMissing(SysIdError, ValueError):
    pass


class UnstableSystem(SysIdError, RuntimeError):
    pass


class DegenerateTruth(SysIdError, ValueError):
    pass


class AllFailedRow(SysIdError, ValueError):
    pass


class ConfigError(SysIdError, ValueError):
    pass
