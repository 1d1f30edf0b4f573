"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class FlowFormatError(ValueError):
    """Malformed ``.flo`` file."""


class ModelError(RuntimeError):
    """An appearance model could not be fitted from the available samples."""
