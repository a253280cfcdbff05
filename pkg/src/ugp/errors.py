"""Exception types shared across the package."""


class UgpError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(UgpError):
    """A network or run configuration is internally inconsistent."""


class ShapeError(UgpError, ValueError):
    """Tensor shapes do not line up with what an operation expects."""


class UnknownTaskError(UgpError, KeyError):
    """A task id has no registered head."""


class StalenessError(UgpError):
    """A forward trace was replayed against parameters of a different version."""


class ContractViolation(UgpError):
    """A caller broke a documented interaction contract."""


class CheckpointError(UgpError):
    """A checkpoint file is malformed or truncated."""


class ProtocolError(UgpError):
    """A wire message could not be decoded."""


class RemoteEnvironmentError(UgpError):
    """An environment server reported a failure or the connection broke."""


class EngineFailure(UgpError):
    """Too many actors aborted for the training run to be trusted."""
