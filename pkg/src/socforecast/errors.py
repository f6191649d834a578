"""Exception types shared across the package."""


class SocForecastError(Exception):
    """Base class for all package errors."""


class ShapeError(SocForecastError, ValueError):
    pass


class NumericError(SocForecastError, ArithmeticError):
    pass


class SchemaError(SocForecastError, ValueError):
    pass


class ParseError(SocForecastError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(SocForecastError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class TrainingError(SocForecastError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class StateError(SocForecastError, RuntimeError):
    pass


class ScalabilityError(SocForecastError, ValueError):
    """Raised when a training set exceeds what the SVR solver accepts."""


class ProfileNotFoundError(SocForecastError, KeyError):
    pass


class UndefinedMetricError(SocForecastError, ZeroDivisionError):
    """R² is undefined for constant targets; ``report`` still carries MAE and RMSE."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
