"""Exception hierarchy shared by every aqcast module."""


class AqcastError(ValueError):
    """Base class for all errors raised by aqcast."""


class SchemaError(AqcastError):
    """CSV header does not match the station schema."""


class ParseError(AqcastError):
    """A data cell could not be parsed."""


class OrderingError(AqcastError):
    """Timestamps are not strictly increasing."""


class ImputationError(AqcastError):
    """A missing value has no available neighbor to impute from."""

    def __init__(self, row, feature):
        super().__init__(f"no available neighbors to impute row {row}, feature {feature!r}")
        self.row = row
        self.feature = feature


class PreconditionError(AqcastError):
    pass


class InsufficientDataError(AqcastError):
    pass


class RangeError(AqcastError):
    """A time range selects no rows."""


class SplitError(AqcastError):
    pass


class ShapeError(AqcastError):
    pass


class StateError(AqcastError):
    """A forward cache does not belong to the parameters it is used with."""


class DivergenceError(AqcastError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class UnsupportedModeError(AqcastError):
    pass


class ConfigError(AqcastError):
    pass
