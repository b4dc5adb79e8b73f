"""Exception hierarchy shared by every subsystem."""


class FedKGEError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(FedKGEError, ValueError):
    pass


class ShapeError(InvalidInputError):
    pass


class DatasetError(FedKGEError):
    """Raised while loading a dataset; the message names file and line."""

    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        self.reason = reason
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {reason}")


class ConfigError(FedKGEError, ValueError):
    pass


class NumericError(FedKGEError, ArithmeticError):
    def __init__(self, param, message="non-finite gradient"):
        self.param = param
        super().__init__(f"{message} in parameter '{param}'")


class SamplingError(FedKGEError):
    pass


class EvaluationError(FedKGEError):
    pass


class CheckpointError(FedKGEError):
    pass
