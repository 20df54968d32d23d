"""Exception hierarchy.

Two families matter to the CLI: :class:`ConfigError` (bad input, exit code 2)
and :class:`NumericError` (a computation could not be completed, exit code 3).
"""


class NhmcError(Exception):
    """Base class for all package errors."""


class ConfigError(NhmcError, ValueError):
    pass


class NumericError(NhmcError, ArithmeticError):
    pass


class NegativeEntry(ConfigError):
    def __init__(self, i, j, value):
        self.i, self.j, self.value = i, j, value
        super().__init__(f"negative entry {value!r} at ({i}, {j})")


class RowSumOutOfTolerance(ConfigError):
    def __init__(self, i, total):
        self.i, self.sum = i, total
        super().__init__(f"row {i} sums to {total!r}")


class DimensionMismatch(ConfigError):
    pass


class LengthMismatch(ConfigError):
    pass


class EmptyInput(ConfigError):
    pass


class InvalidN(ConfigError):
    pass


class InvalidAlpha(ConfigError):
    pass


class NonpositiveTheta(NumericError):
    def __init__(self, theta):
        self.theta = theta
        super().__init__(f"theta must exceed 1e-12, got {theta!r}")


class NotIrreducible(NumericError):
    pass


class NoConvergence(NumericError):
    def __init__(self, iterations):
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations")


class HorizonExceeded(NumericError):
    """Strong ergodicity of a cyclic class could not be certified within the horizon.

    This is a budget failure, not a proof that the class is not strongly ergodic.
    """

    def __init__(self, cls, last_residual):
        self.cls, self.last_residual = cls, last_residual
        super().__init__(f"class C_{cls}: residual {last_residual!r} still above tolerance at horizon")


class InstanceTooLarge(NumericError):
    pass


class SchemaError(ConfigError):
    def __init__(self, path, reason):
        self.path, self.reason = path, reason
        super().__init__(f"{path}: {reason}")


class ConfigSyntaxError(ConfigError):
    def __init__(self, line, msg=""):
        self.line = line
        super().__init__(f"line {line}: {msg}" if msg else f"line {line}")


class UnsupportedFormat(ConfigError):
    pass
