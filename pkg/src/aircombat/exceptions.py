class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class DegenerateGeometryError(ContractError):
    """Two aircraft occupy the same point, so bearings are undefined."""


class ShapeError(ContractError):
    """Array or checkpoint dimensions disagree with the configuration."""


class ConfigError(ValueError):
    """Unknown key or invalid value in a run configuration."""


class TrainingDivergenceError(FloatingPointError):
    """A gradient or loss went non-finite during training.

    ``payload`` carries diagnostics (step, offending array names, loss).
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = dict(payload or {})
