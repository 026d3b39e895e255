"""Exception types shared across the package."""


class BoostMatchError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BoostMatchError, ValueError):
    """Tensor shapes do not fit together."""


class ContractError(BoostMatchError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigurationError(BoostMatchError, ValueError):
    """A configuration is internally inconsistent or unusable."""


class DataError(BoostMatchError):
    """Input data (manifest, weight table, checkpoint, image) is malformed."""


class ExhaustionError(BoostMatchError, RuntimeError):
    """The loader could not assemble the requested batch."""
