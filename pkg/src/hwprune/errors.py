"""Exception hierarchy. The CLI maps each family to an exit code."""


class HwPruneError(Exception):
    exit_code = 1


class UsageError(HwPruneError, ValueError):
    exit_code = 1


class ConfigError(HwPruneError, ValueError):
    exit_code = 1


class DimensionError(HwPruneError, ValueError):
    exit_code = 1


class FormatError(HwPruneError, ValueError):
    exit_code = 2


class NumericError(HwPruneError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer
