"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: parameter/shape/config problems are
validation failures (exit 2), divergence is a runtime failure (exit 3),
and I/O problems exit 4.
"""


class ParameterError(ValueError):
    """A parameter or configuration value violates its contract."""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with each other or with the task."""


class DegenerateStepError(ValueError):
    """A diffusion step has a degenerate alpha/alpha-bar (division by zero)."""


class StateError(RuntimeError):
    """An object is in a state that does not admit the requested operation."""


class DivergenceError(RuntimeError):
    """Training or sampling produced non-finite values.

    Carries the step index at which the divergence was detected.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
