"""Exception hierarchy shared by every module.

The CLI maps ``ValidationError`` subclasses to exit code 2 and
``NumericError`` subclasses to exit code 3.
"""


class PvsidError(Exception):
    """Base class for all package errors."""


class ValidationError(PvsidError, ValueError):
    """Bad argument, shape mismatch or malformed input file."""


class OutOfWorkspaceError(ValidationError):
    def __init__(self, radius, message=None):
        self.radius = float(radius)
        super().__init__(message or f"target radius {self.radius:.6g} m is outside the reachable workspace")


class ConfigError(ValidationError):
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ModelFormatError(ValidationError):
    """Model file is truncated, corrupted, or of an unsupported version."""


class NotWarmedUpError(ValidationError):
    """Controller called before its past buffers hold a full window."""


class NumericError(PvsidError, ArithmeticError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")


class TrainingFailure(NumericError):
    def __init__(self, message, last_finite_epoch):
        self.last_finite_epoch = last_finite_epoch
        super().__init__(f"{message}; last finite epoch: {last_finite_epoch}")
