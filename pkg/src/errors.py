"""
Errors - Exception hierarchy for tabtok

Every error raised by the package derives from TabTokError and belongs to one
of three families. The CLI maps each family to an exit code:

    ConfigError   -> 2  (bad configuration or inconsistent arguments)
    DataError     -> 3  (unreadable or unsuitable input data)
    NumericError  -> 4  (non-finite values during training)

Each concrete error also subclasses the closest builtin so callers that only
know about ValueError / FileNotFoundError still catch it.
"""


class TabTokError(Exception):
    """Base class for all tabtok errors."""

    exit_code = 1


class ConfigError(TabTokError, ValueError):
    exit_code = 2


class DataError(TabTokError, ValueError):
    exit_code = 3


class NumericError(TabTokError, ArithmeticError):
    exit_code = 4


# Configuration / argument errors

class ConfigMismatch(ConfigError):
    pass


class TaskModeMismatch(ConfigError):
    pass


class VersionMismatch(ConfigError):
    pass


class OutOfRange(ConfigError, IndexError):
    pass


class IdOutOfBounds(ConfigError, IndexError):
    pass


class ShapeMismatch(ConfigError):
    pass


class LengthMismatch(ConfigError):
    pass


class GraphReuse(ConfigError, RuntimeError):
    pass


class UnpairedDataset(ConfigError):
    pass


class EmptyDatasetList(ConfigError):
    pass


class EmptyCorpus(ConfigError):
    pass


class EmptyInput(ConfigError):
    pass


# Data errors

class SchemaError(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"Column '{name}' declared in schema but not found in CSV header")
        self.name = name


class TargetMissing(DataError):
    pass


class EmptyFile(DataError):
    pass


class MalformedFile(DataError):
    pass


class TooFewRows(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class SingleClass(DataError):
    pass


class ZeroNumerical(DataError, ZeroDivisionError):
    pass


class CorruptFile(DataError):
    pass


# Numeric failures

class NonFiniteLoss(NumericError):
    pass


def config_from_dict(cls, data):
    """Build a config dataclass from a JSON object; unknown keys and bad values become ConfigError."""
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} expects a JSON object, got {type(data).__name__}")
    try:
        return cls(**data)
    except TabTokError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid {cls.__name__}: {e}") from e
