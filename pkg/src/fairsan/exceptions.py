"""Exception hierarchy shared across the package."""


class FairsanError(Exception):
    """Base class for all package errors."""


class UsageError(FairsanError, ValueError):
    """Invalid call: bad arguments, wrong shapes, missing state."""


class ConfigError(UsageError):
    """Schema or training configuration is inconsistent."""


class DataError(FairsanError, ValueError):
    """Input data cannot be parsed or does not match the schema."""


class UnsupportedCardinalityError(DataError):
    """Sensitive or decision column is not binary."""


class UndefinedMetricError(FairsanError, ValueError):
    """A metric is undefined on the given input (e.g. a missing group)."""


class DegenerateLabelError(DataError):
    """A classifier was asked to fit a single-class target."""


class TrainingDivergenceError(FairsanError, ArithmeticError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message, epoch=None, batch=None):
        context = []
        if epoch is not None:
            context.append(f"epoch={epoch}")
        if batch is not None:
            context.append(f"batch={batch}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
