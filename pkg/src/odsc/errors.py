"""Exception hierarchy; the CLI maps each class to a stable exit code."""


class OdscError(Exception):
    exit_code = 1


class ConfigError(OdscError, ValueError):
    exit_code = 2


class ShapeError(OdscError, ValueError):
    exit_code = 2


class DataError(OdscError):
    exit_code = 3


class DivergenceError(OdscError, ArithmeticError):
    exit_code = 4


class CheckpointMismatch(OdscError):
    exit_code = 5
