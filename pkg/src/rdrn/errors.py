"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A model, block or pipeline was configured inconsistently."""


class InputError(ValueError):
    """An input tensor or image violates the operation's contract."""


class CheckpointMismatchError(RuntimeError):
    """Stored tensors do not fit the model they are being loaded into."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite; see the diagnostic dump."""
