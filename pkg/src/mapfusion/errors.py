"""Exception hierarchy shared by every subpackage.

The CLI maps these onto its exit codes, so new failure modes should subclass
one of the families below rather than raising bare built-ins.
"""


class MapFusionError(Exception):
    """Base class for all package errors."""


class ContractError(MapFusionError, ValueError):
    """An operation received arguments violating its shape/value contract."""


class ConfigError(MapFusionError, ValueError):
    """Invalid configuration value."""


class UsageError(MapFusionError, RuntimeError):
    """API called out of order (e.g. backward without a recorded forward)."""


class NumericError(MapFusionError, ArithmeticError):
    """Training produced a non-finite value."""

    def __init__(self, message, *, epoch=None, batch=None, loss=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class InputError(MapFusionError, ValueError):
    """A raster or other input cannot be used (empty, too small, undecodable)."""


class SpecError(MapFusionError, ValueError):
    """A forgery specification is internally inconsistent."""


class FormatError(MapFusionError, ValueError):
    """A file does not follow its declared binary/text format."""


class CheckpointError(FormatError):
    """Base for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class PayloadError(CheckpointError):
    """Payload length or parameter shapes disagree with the header."""
