"""Exception hierarchy shared across the package."""


class DynTileError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DynTileError):
    """Invalid configuration value or config-file entry."""


class ContractError(DynTileError):
    """A caller violated an internal precondition."""


class BackendError(DynTileError):
    """Detector backend failed or is unavailable."""


class ProtocolError(BackendError):
    """Malformed message on the external detector wire protocol."""


class GenerationError(DynTileError):
    """Synthetic scene generation could not satisfy its constraints."""


class FormatError(DynTileError):
    """A data file does not match its documented schema."""


class PipelineError(DynTileError):
    """Dataset-level pipeline failure."""
