"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, BlowUpError -> 2,
property/acceptance failures -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration (bad value, unknown key, failed precondition)."""


class DissipativityError(ConfigError):
    """The damping condition alpha - 18*lambda^2/beta > 0 does not hold."""


class DimensionMismatchError(ValueError):
    """Operands live on lattices of different radius."""


class BlowUpError(RuntimeError):
    """A trajectory produced NaN/Inf; carries path and step context."""

    def __init__(self, message, path_index=None, step=None):
        super().__init__(message)
        self.path_index = path_index
        self.step = step
