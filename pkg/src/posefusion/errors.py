"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FusionError(Exception):
    exit_code = 2


class ConfigError(FusionError):
    exit_code = 1


class DomainError(FusionError, ValueError):
    """Input outside the valid domain of a conversion or model."""


class StateError(FusionError, RuntimeError):
    """Operation requires state that has not been initialized."""


class OrderingError(FusionError, ValueError):
    """Timestamps arrived out of order."""


class ParseError(FusionError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line


class AlignmentError(FusionError, ValueError):
    pass


class EvaluationError(FusionError, ValueError):
    pass


class NumericError(FusionError, ArithmeticError):
    exit_code = 3


class GaugeError(NumericError):
    """The normal equations are singular in some direction."""

    def __init__(self, message, directions=()):
        super().__init__(message)
        self.directions = list(directions)
