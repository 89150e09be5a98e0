"""Exception types shared across the toolkit."""


class FGNICError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(FGNICError):
    """Invalid option, enum value, or inconsistent configuration."""


class ShapeMismatchError(FGNICError):
    """Arrays or tensors whose shapes do not line up."""


class InputError(FGNICError):
    """A forward call is missing a required input (e.g. the clean image)."""


class FreezeViolationError(FGNICError):
    """A parameter group that must stay frozen was (or could be) updated."""


class TrainingDivergedError(FGNICError):
    """Non-finite loss encountered during training."""


class AccountingError(FGNICError):
    """Cost accounting hit a layer type it cannot count."""
