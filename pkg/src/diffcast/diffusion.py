"""Stateless diffusion algebra shared by training and sampling.

All functions operate elementwise on arrays of shape (frames, channels, H, W)
and take a 0-based step index ``t`` into a :class:`~diffcast.schedule.NoiseSchedule`.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStepError, ParameterError, ShapeError
from .schedule import NoiseSchedule


@dataclass
class LatentState:
    """A partially denoised forecast tensor.

    ``step`` counts remaining reverse steps: ``step = T`` is the Gaussian
    prior, ``step = 0`` the finished forecast. A state at ``step = s > 0``
    is consumed by a reverse update that reads schedule tables at index
    ``s - 1``.
    """

    data: np.ndarray
    step: int

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeError(f"latent tensor must be (N, C, H, W), got shape {self.data.shape}")
        if self.step < 0:
            raise ParameterError(f"step must be nonnegative, got {self.step}")
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("latent tensor contains non-finite entries")


@dataclass
class ContextField:
    """Observed frames conditioning a forecast.

    ``timestamps`` are frame offsets relative to forecast start (negative;
    e.g. ``[-4, -3, -2, -1]`` for four context frames).
    """

    data: np.ndarray
    timestamps: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[0] < 1:
            raise ShapeError(f"context must be (N0 >= 1, C, H, W), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("context contains non-finite entries")
        if self.timestamps is None:
            n0 = self.data.shape[0]
            self.timestamps = np.arange(-n0, 0, dtype=np.float64)


def _check_step(t: int, sched: NoiseSchedule) -> None:
    if not 0 <= t < sched.T:
        raise ParameterError(f"step index {t} outside schedule range [0, {sched.T})")


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Corrupt ``x0`` to noise level ``t``: sqrt(a_bar)*x0 + sqrt(1-a_bar)*eps."""
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    _check_step(t, sched)
    # Coefficients as python floats so float32 inputs are not upcast.
    a_bar = float(sched.alpha_bars[t])
    return np.sqrt(a_bar) * x0 + np.sqrt(1.0 - a_bar) * eps


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Single-jump clean-field estimate (x_t - sqrt(1-a_bar)*eps_hat) / sqrt(a_bar)."""
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"x_t shape {x_t.shape} != eps_hat shape {eps_hat.shape}")
    _check_step(t, sched)
    a_bar = float(sched.alpha_bars[t])
    if a_bar <= 0.0:
        raise DegenerateStepError(f"alpha_bar[{t}] = {a_bar}; clean-field estimate undefined")
    return (x_t - np.sqrt(1.0 - a_bar) * eps_hat) / np.sqrt(a_bar)


def posterior_mean(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Reverse-step mean (x_t - (1-a)/sqrt(1-a_bar) * eps_hat) / sqrt(a).

    Both guidance branches use this; they differ only in which noise
    prediction is supplied.
    """
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"x_t shape {x_t.shape} != eps_hat shape {eps_hat.shape}")
    _check_step(t, sched)
    alpha = float(sched.alphas[t])
    a_bar = float(sched.alpha_bars[t])
    if alpha <= 0.0:
        raise DegenerateStepError(f"alpha[{t}] = {alpha}; reverse step undefined")
    if a_bar >= 1.0:
        # (1 - alpha) / sqrt(1 - a_bar) is 0/0 only when alpha is also 1;
        # that identity step is well defined.
        if alpha == 1.0:
            return x_t.copy()
        raise DegenerateStepError(f"alpha_bar[{t}] = {a_bar} with alpha < 1; 0-denominator")
    coef = (1.0 - alpha) / np.sqrt(1.0 - a_bar)
    return (x_t - coef * eps_hat) / np.sqrt(alpha)
