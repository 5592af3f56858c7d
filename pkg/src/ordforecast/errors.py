"""Exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    exit_code = 1


class DataError(ValueError):
    exit_code = 2


class NumericalError(ArithmeticError):
    exit_code = 3
