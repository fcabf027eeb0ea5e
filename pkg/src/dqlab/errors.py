"""Exception types shared across the package."""


class DqlabError(Exception):
    """Base class for all package errors."""


class ShapeError(DqlabError):
    """Operands have incompatible shapes or a non-scalar where a scalar is needed."""


class DomainError(DqlabError):
    """Input outside an operation's mathematical domain (e.g. log of x <= 0)."""


class NumericError(DqlabError):
    """Non-finite value produced where the contract requires finiteness."""


class ConfigError(DqlabError):
    """Invalid or inconsistent run configuration."""


class CheckpointError(DqlabError):
    """Checkpoint file is corrupt, truncated, or version-incompatible."""
