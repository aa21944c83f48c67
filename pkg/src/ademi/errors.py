"""Exception types shared across the package.

The CLI maps these to process exit codes (see ``ademi.cli``).
"""


class DomainError(ValueError):
    """Input violates an operation's precondition."""


class ConfigError(DomainError):
    """Invalid or inconsistent experiment configuration."""


class InsufficientCapacityError(DomainError):
    """The channel cannot carry even one latent element per sample."""


class NumericalError(ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class ConvergenceError(ArithmeticError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual
