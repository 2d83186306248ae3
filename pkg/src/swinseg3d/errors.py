"""Exception hierarchy shared by every subpackage."""


class SwinSegError(Exception):
    """Base class for all library errors."""


class ContractError(SwinSegError, ValueError):
    """Raised when a documented precondition is violated."""


class ShapeError(ContractError):
    pass


class ConfigError(SwinSegError, ValueError):
    pass


class ConfigMismatchError(ConfigError):
    pass


class VVOLError(SwinSegError, IOError):
    pass


class BadMagicError(VVOLError):
    pass


class TruncatedPayloadError(VVOLError):
    pass


class DimensionOverflowError(VVOLError):
    pass


class CheckpointError(SwinSegError, IOError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptManifestError(CheckpointError):
    pass


class NonFiniteLossError(SwinSegError, FloatingPointError):
    pass
