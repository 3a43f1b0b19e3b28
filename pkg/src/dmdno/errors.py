"""Exception hierarchy shared by every module."""


class DmdnoError(Exception):
    pass


class InvalidInputError(DmdnoError, ValueError):
    pass


class DegenerateInputError(DmdnoError, ValueError):
    """Input is well-formed but carries no usable signal (e.g. all-zero spectrum)."""


class NumericalError(DmdnoError, ArithmeticError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class FormatError(DmdnoError):
    """Malformed container file; ``field`` names the offending header or array."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class TrainingAborted(NumericalError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
