"""Exception types shared across the toolkit."""


class ProbeError(Exception):
    pass


class ShapeError(ProbeError, ValueError):
    pass


class NumericError(ProbeError, ArithmeticError):
    pass


class ConfigError(ProbeError, ValueError):
    pass


class UsageError(ProbeError, RuntimeError):
    pass


class FormatError(ProbeError, ValueError):
    pass


class TruncationError(FormatError):
    pass


class DataError(ProbeError, ValueError):
    pass
