"""Exception types shared across the simulator."""


class ContractError(ValueError):
    """An operation was called outside its precondition."""


class ShapeError(ContractError):
    pass


class DegenerateInputError(ContractError):
    """Input has no usable direction or magnitude (e.g. a zero vector to normalize)."""


class ConfigError(ValueError):
    pass


class DeepFadeError(RuntimeError):
    """Fading coefficient too small for zero-forcing equalization."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, op: str | None = None):
        super().__init__(message)
        self.op = op
