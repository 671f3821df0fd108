"""Noise schedules for the forward/reverse diffusion process.

A schedule is a triple of per-step tables (betas, alphas, alpha_bars) with
``alphas[t] = 1 - betas[t]`` and ``alpha_bars[t]`` the running product of
alphas. Step indices are 0-based internally: table entry ``t`` describes the
(t+1)-th noising step, so ``t = 0`` is the least-noised level. User-facing
output (CLI, manifests) labels steps 1-based.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable lookup tables parameterizing the diffusion process.

    Instances built by :func:`cosine_schedule` / :func:`linear_schedule`
    satisfy ``validate``; direct construction is allowed for tests that
    need hypothetical tables (for example an exact alpha_bar of 1).
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def validate(self) -> None:
        if self.betas.ndim != 1 or not (
            self.betas.shape == self.alphas.shape == self.alpha_bars.shape
        ):
            raise ParameterError("schedule tables must be 1-D arrays of equal length")
        if not np.all((self.betas > 0.0) & (self.betas < 1.0)):
            raise ParameterError("betas must lie strictly in (0, 1)")
        if np.any(self.betas > BETA_MAX):
            raise ParameterError(f"betas must not exceed the {BETA_MAX} clamp")
        if not np.array_equal(self.alphas, 1.0 - self.betas):
            raise ParameterError("alphas must equal 1 - betas exactly")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ParameterError("alpha_bars must be strictly decreasing")
        if not (0.0 < self.alpha_bars[0] <= 1.0 and self.alpha_bars[-1] > 0.0):
            raise ParameterError("alpha_bars must stay within (0, 1]")

    def digest(self) -> str:
        """Content hash of the beta table, for checkpoint/manifest linkage."""
        return hashlib.sha256(np.ascontiguousarray(self.betas, dtype="<f8").tobytes()).hexdigest()

    def to_dict(self) -> dict:
        """Explicit arrays for the run manifest, so runs stay replayable."""
        return {
            "T": self.T,
            "betas": self.betas.tolist(),
            "alpha_bars": self.alpha_bars.tolist(),
        }


def _finish(betas: np.ndarray) -> NoiseSchedule:
    alphas = 1.0 - betas
    sched = NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))
    sched.validate()
    return sched


def cosine_schedule(T: int, s_offset: float = 0.008) -> NoiseSchedule:
    """Squared-cosine noise schedule.

    Follows the standard construction: with
    ``f(u) = cos^2(((u/T + s) / (1 + s)) * pi/2)`` the cumulative products
    are ``alpha_bars[t] = f(t+1) / f(t=0 grid point)`` and the betas are the
    step ratios ``1 - f(t+1)/f(t)``, clamped at 0.999 so the final alphas
    stay positive.

    Parameters
    ----------
    T : int
        Number of diffusion steps, at least 2.
    s_offset : float
        Small offset keeping the first step away from zero noise;
        must lie in (0, 0.1).
    """
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise ParameterError(f"T must be an integer >= 2, got {T!r}")
    if not 0.0 < s_offset < 0.1:
        raise ParameterError(f"s_offset must lie in (0, 0.1), got {s_offset!r}")
    grid = np.arange(T + 1, dtype=np.float64) / T
    f = np.cos((grid + s_offset) / (1.0 + s_offset) * (np.pi / 2.0)) ** 2
    betas = np.minimum(1.0 - f[1:] / f[:-1], BETA_MAX)
    return _finish(betas)


def linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas, endpoints included.

    Requires ``0 < beta_start <= beta_end < 1``.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start!r}, {beta_end!r})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return _finish(betas)
