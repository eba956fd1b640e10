"""Exception types raised across the package."""


class LdxError(Exception):
    """Base class for all package errors."""


class ValidationError(LdxError, ValueError):
    """Input failed a structural or range check."""


class ConvergenceError(LdxError, RuntimeError):
    """An iterative routine hit its iteration cap."""


class NonUniqueOptimumError(LdxError, ValueError):
    """Two actions tie for the optimum at some state."""

    def __init__(self, state, actions):
        self.state = state
        self.actions = tuple(actions)
        super().__init__(f"optimal action not unique at state {state}: tied actions {self.actions}")


class InfeasibleError(LdxError, ValueError):
    """The epsilon-restricted flow polytope is empty."""


class PositivityError(LdxError, ValueError):
    """An allocation entry entering a denominator is not strictly positive."""


class NumericalError(LdxError, RuntimeError):
    """An inner solver failed; ``residual`` carries the last constraint residual."""

    def __init__(self, message, residual=float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")


class DegenerateAllocationError(LdxError, ValueError):
    """A state carries zero allocation mass."""


class ModeError(LdxError, ValueError):
    """Trajectory sampling requested on a model that is not communicating."""


class RepresentationError(LdxError, ValueError):
    """A linear MDP violates its representation invariants."""


class ConfigError(LdxError, ValueError):
    """Benchmark configuration failed schema validation."""
