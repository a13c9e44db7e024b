"""Exception types shared across the package."""


class HsrTrainError(Exception):
    """Base class for all library errors."""


class InvalidDimensionError(HsrTrainError, ValueError):
    pass


class NumericInputError(HsrTrainError, ValueError):
    pass


class DimensionMismatchError(HsrTrainError, ValueError):
    pass


class StaleIdError(HsrTrainError, KeyError):
    pass


class InputError(HsrTrainError, ValueError):
    """Input vector violates a precondition (e.g. not unit norm)."""


class ConsistencyError(HsrTrainError, RuntimeError):
    """Internal bookkeeping (ledger, index, model) went out of sync."""


class EngineMismatchError(HsrTrainError, ValueError):
    pass


class DegenerateDataError(HsrTrainError, ValueError):
    """Two points coincide or are antipodal, so separability is zero."""


class PackingInfeasibleError(HsrTrainError, RuntimeError):
    pass


class DatasetFormatError(HsrTrainError, ValueError):
    pass


class ZeroNormError(DatasetFormatError):
    pass


class DivergenceError(HsrTrainError, RuntimeError):
    pass


class UnreliableLambdaError(HsrTrainError, RuntimeError):
    """Monte-Carlo estimate of the spectral gap is inside its own noise."""


class ConfigError(HsrTrainError, ValueError):
    pass
