"""Exception types shared across the package."""


class OnionBenchError(Exception):
    """Base class for every error raised by this package."""


class IngestionError(OnionBenchError):
    """A manifest row points at a file that cannot be read."""


class DecodeError(IngestionError):
    """A referenced file exists but is not a decodable RGB image."""


class EmptyDatasetError(OnionBenchError):
    """An operation that needs at least one sample received none."""


class UnknownClassError(OnionBenchError):
    """A class name was referenced that is not in the catalog."""


class StratificationError(OnionBenchError):
    """A stratified split or fold assignment is infeasible for the given counts."""


class ConfigError(OnionBenchError):
    """A configuration value violates its contract."""


class LabelError(OnionBenchError):
    """A label index is out of range for the governing catalog."""


class DivergenceError(OnionBenchError):
    """Training produced a non-finite loss."""


class EvaluationError(OnionBenchError):
    """Evaluation was attempted on an empty prediction stream."""


class ShapeError(OnionBenchError):
    """An array argument has an incompatible shape."""


class NumericError(OnionBenchError):
    """A forward pass produced non-finite values."""
