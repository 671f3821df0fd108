"""Reverse-process samplers with precision-weighted or constant guidance.

The precision-weighted sampler keeps a bounded FIFO of single-jump clean-field
estimates from the unconditional branch. Their per-coordinate variance is an
inverse-precision field: where recent estimates disagree, the forecast is less
predictable, and the conditional-vs-unconditional guidance difference gets a
larger weight. Weights come from standardizing the variance field, clipping to
[0, 1], scaling by the guidance strength and adding 1, so they always lie in
[1, 1 + lambda]; a constant variance field yields weight 1 everywhere.
"""

from collections import deque
from dataclasses import asdict, dataclass, replace

import numpy as np

from .diffusion import ContextField, LatentState, posterior_mean, predict_x0
from .errors import DivergenceError, ParameterError, ShapeError, StateError
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class SamplerConfig:
    """Reproducibility contract of one inference run."""

    steps: int = 200                 # reverse steps; must equal the schedule length
    lam: float = 2.0                 # guidance strength, >= 0
    queue_capacity: int = 4          # bounded FIFO length for clean-field estimates
    window_k: int | None = None      # variance window over newest entries; None = capacity
    stochastic_step: bool = False    # add sqrt(beta_t) * z on all but the final step
    clip_lo: float = 0.0
    clip_hi: float = 1.0
    freeze_uncond_noise: bool = False  # draw the unconditional noise once per trajectory
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.lam < 0.0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam!r}")
        if self.queue_capacity < 1:
            raise ParameterError(f"queue_capacity must be >= 1, got {self.queue_capacity}")
        if self.window_k is not None and not 1 <= self.window_k <= self.queue_capacity:
            raise ParameterError(
                f"window_k must lie in [1, queue_capacity], got {self.window_k}"
            )
        if not self.clip_lo < self.clip_hi:
            raise ParameterError(f"need clip_lo < clip_hi, got ({self.clip_lo!r}, {self.clip_hi!r})")

    @property
    def window(self) -> int:
        return self.queue_capacity if self.window_k is None else self.window_k

    def to_dict(self) -> dict:
        return asdict(self)


class PrecisionQueue:
    """Bounded FIFO of clean-field estimates, newest last."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ParameterError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries = deque()

    def push(self, estimate: np.ndarray) -> None:
        if self._entries and estimate.shape != self._entries[-1].shape:
            raise ShapeError(
                f"estimate shape {estimate.shape} != queued shape {self._entries[-1].shape}"
            )
        self._entries.append(estimate)
        while len(self._entries) > self.capacity:
            self._entries.popleft()

    def __len__(self) -> int:
        return len(self._entries)

    def stacked(self, newest: int | None = None) -> np.ndarray:
        if not self._entries:
            raise StateError("precision queue is empty")
        entries = list(self._entries)
        if newest is not None:
            entries = entries[-newest:]
        return np.stack(entries)


def guidance_field(p_mean: np.ndarray, g_mean: np.ndarray) -> np.ndarray:
    """Difference between the conditional and unconditional reverse means."""
    if p_mean.shape != g_mean.shape:
        raise ShapeError(f"branch shapes differ: {p_mean.shape} vs {g_mean.shape}")
    return p_mean - g_mean


def inverse_precision(queue: PrecisionQueue, window: int | None = None) -> np.ndarray:
    """Per-coordinate population variance over the queued estimates.

    A single entry yields the zero field. ``window`` restricts the variance
    to the newest entries.
    """
    stacked = queue.stacked(window)
    if stacked.shape[0] == 1:
        return np.zeros(stacked.shape[1:])
    return stacked.var(axis=0)


def normalize_weights(U: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Map a variance field to guidance weights in [1, 1 + lambda].

    Standardizes by the field's global mean and population standard deviation,
    clips, scales by lambda and shifts by 1. A (near-)constant field has no
    spatial signal and maps to weight 1 everywhere.
    """
    if not np.all(np.isfinite(U)):
        raise ParameterError("inverse-precision field contains non-finite entries")
    sigma = float(U.std())
    if sigma < 1e-12:
        return np.ones_like(U)
    z = (U - U.mean()) / sigma
    return cfg.lam * np.clip(z, cfg.clip_lo, cfg.clip_hi) + 1.0


def _weight_bounds(cfg: SamplerConfig) -> tuple:
    return 1.0 + cfg.lam * cfg.clip_lo, 1.0 + cfg.lam * cfg.clip_hi


def _context_array(context) -> np.ndarray:
    data = context.data if isinstance(context, ContextField) else np.asarray(context)
    if data.ndim != 4:
        raise ShapeError(f"context must be (N0, C, H, W), got shape {data.shape}")
    return np.asarray(data, dtype=np.float64)


def precision_weighted_step(state: LatentState, context, model, queue: PrecisionQueue,
                            sched: NoiseSchedule, cfg: SamplerConfig,
                            rng: np.random.Generator, uncond_noise=None):
    """One reverse update with precision-weighted guidance.

    Consumes a state at step s >= 1 (schedule tables at index s-1) and
    returns ``(new_state, weights, variance_field)``. When ``uncond_noise``
    is None a fresh noise condition is drawn from ``rng``.
    """
    if state.step < 1:
        raise ParameterError(f"state at step {state.step} has no reverse step left")
    t = state.step - 1
    ctx = _context_array(context)
    eps_c = rng.standard_normal(ctx.shape) if uncond_noise is None else uncond_noise

    eps_cond = model.predict(state.data, ctx, t)
    eps_free = model.predict(state.data, eps_c, t)
    p_mean = posterior_mean(state.data, eps_cond, t, sched)
    g_mean = posterior_mean(state.data, eps_free, t, sched)

    queue.push(predict_x0(state.data, eps_free, t, sched))
    variance = inverse_precision(queue, cfg.window)
    weights = normalize_weights(variance, cfg)
    lo, hi = _weight_bounds(cfg)
    if weights.min() < lo or weights.max() > hi:
        raise StateError(
            f"weight field escaped [{lo}, {hi}] at step {state.step}: "
            f"[{weights.min()}, {weights.max()}]"
        )

    x_next = g_mean + weights * guidance_field(p_mean, g_mean)
    if cfg.stochastic_step and t > 0:
        x_next = x_next + np.sqrt(sched.betas[t]) * rng.standard_normal(x_next.shape)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"non-finite state after reverse step {state.step}", step=state.step)
    return LatentState(data=x_next, step=state.step - 1), weights, variance


@dataclass
class ForecastResult:
    """A finished forecast plus the diagnostics of how it was produced."""

    forecast: np.ndarray
    weight_history: list | None
    final_inverse_precision: np.ndarray | None
    seed: int
    config: dict

    def __post_init__(self):
        if not np.all(np.isfinite(self.forecast)):
            raise DivergenceError("forecast contains non-finite values")


def _prepare(context, model, sched: NoiseSchedule, cfg: SamplerConfig, shape):
    cfg.validate()
    if cfg.steps != sched.T:
        raise ParameterError(f"config wants {cfg.steps} steps, schedule has {sched.T}")
    ctx = _context_array(context)
    if len(shape) != 4:
        raise ShapeError(f"target shape must be (N, C, H, W), got {shape}")
    if ctx.shape[2:] != tuple(shape[2:]):
        raise ShapeError(
            f"context spatial dims {ctx.shape[2:]} != target spatial dims {tuple(shape[2:])}"
        )
    arch = getattr(model, "arch", None)
    if arch is not None:
        if tuple(shape) != arch.target_shape:
            raise ShapeError(f"target shape {shape} != model target {arch.target_shape}")
        if ctx.shape != arch.context_shape:
            raise ShapeError(f"context shape {ctx.shape} != model context {arch.context_shape}")
    return ctx


def sample_precision_weighted(context, model, sched: NoiseSchedule, cfg: SamplerConfig,
                              shape, record_weights: bool = True) -> ForecastResult:
    """Run the full precision-weighted reverse process from a Gaussian prior.

    Deterministic given cfg.seed; draws, in order: the prior state, then per
    step the unconditional noise condition and (if enabled) the step noise.
    """
    ctx = _prepare(context, model, sched, cfg, shape)
    rng = np.random.default_rng(cfg.seed)
    state = LatentState(data=rng.standard_normal(shape), step=sched.T)
    queue = PrecisionQueue(cfg.queue_capacity)
    frozen = rng.standard_normal(ctx.shape) if cfg.freeze_uncond_noise else None

    history = [] if record_weights else None
    last_u = None
    while state.step > 0:
        state, weights, last_u = precision_weighted_step(
            state, ctx, model, queue, sched, cfg, rng, uncond_noise=frozen
        )
        if record_weights:
            history.append(weights)
    return ForecastResult(
        forecast=state.data,
        weight_history=history,
        final_inverse_precision=last_u,
        seed=cfg.seed,
        config={"mode": "precision", **cfg.to_dict()},
    )


def sample_constant_guidance(context, model, sched: NoiseSchedule, guidance_scale: float,
                             cfg: SamplerConfig, shape) -> ForecastResult:
    """Same reverse loop with a constant scalar guidance weight and no queue."""
    if not np.isfinite(guidance_scale):
        raise ParameterError(f"guidance_scale must be finite, got {guidance_scale!r}")
    ctx = _prepare(context, model, sched, cfg, shape)
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(shape)
    frozen = rng.standard_normal(ctx.shape) if cfg.freeze_uncond_noise else None

    for step in range(sched.T, 0, -1):
        t = step - 1
        eps_c = frozen if frozen is not None else rng.standard_normal(ctx.shape)
        eps_cond = model.predict(x, ctx, t)
        eps_free = model.predict(x, eps_c, t)
        p_mean = posterior_mean(x, eps_cond, t, sched)
        g_mean = posterior_mean(x, eps_free, t, sched)
        x = g_mean + guidance_scale * guidance_field(p_mean, g_mean)
        if cfg.stochastic_step and t > 0:
            x = x + np.sqrt(sched.betas[t]) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state after reverse step {step}", step=step)
    return ForecastResult(
        forecast=x,
        weight_history=None,
        final_inverse_precision=None,
        seed=cfg.seed,
        config={"mode": "constant", "guidance_scale": float(guidance_scale), **cfg.to_dict()},
    )


def _predict_cases(model, x: np.ndarray, cond: np.ndarray, t: int, dtype) -> np.ndarray:
    if hasattr(model, "predict_batch"):
        out = model.predict_batch(x, cond, t)
    else:
        out = np.stack([model.predict(x[i], cond[i], t) for i in range(x.shape[0])])
    return np.asarray(out, dtype=dtype)


def sample_batch(contexts: np.ndarray, model, sched: NoiseSchedule, cfg: SamplerConfig,
                 shape, seeds, mode: str = "precision", guidance_scale: float = 1.0,
                 history_case: int | None = None, dtype=np.float64):
    """Sample many cases in lockstep, one RNG stream and queue per case.

    ``contexts`` is (cases, N0, C, H, W) and ``seeds`` one seed per case. Each
    case draws from its own generator in the same order as the per-case
    samplers and normalizes its weight field over its own coordinates, so at
    float64 the results are bit-compatible with running
    :func:`sample_precision_weighted` (or the constant variant) case by case;
    ``dtype=float32`` halves memory traffic for large batches.

    Returns ``(forecasts, final_inverse_precision, weight_history)`` where the
    last two are None in constant mode (history also requires ``history_case``).
    """
    cfg.validate()
    if cfg.steps != sched.T:
        raise ParameterError(f"config wants {cfg.steps} steps, schedule has {sched.T}")
    if mode not in ("precision", "constant"):
        raise ParameterError(f"mode must be 'precision' or 'constant', got {mode!r}")
    dtype = np.dtype(dtype)
    contexts = np.asarray(contexts, dtype=dtype)
    n_cases = contexts.shape[0]
    if len(seeds) != n_cases:
        raise ParameterError(f"{len(seeds)} seeds for {n_cases} cases")
    gens = [np.random.default_rng(int(s)) for s in seeds]
    ctx_shape = contexts.shape[1:]

    def draw(shape_):
        return np.stack([g.standard_normal(shape_) for g in gens]).astype(dtype, copy=False)

    x = draw(shape)
    frozen = draw(ctx_shape) if cfg.freeze_uncond_noise else None
    queue = deque(maxlen=cfg.queue_capacity)
    lo, hi = _weight_bounds(cfg)
    history = [] if (mode == "precision" and history_case is not None) else None
    variance = None

    # The context's first-layer projection is step-independent; models with a
    # paired-branch forward let us compute it once and share the x_t work
    # between the two guidance branches.
    paired = hasattr(model, "predict_pair")
    proj_ctx = model.condition_projection(contexts) if paired else None
    frozen_proj = (model.condition_projection(frozen)
                   if paired and frozen is not None else None)

    for step in range(sched.T, 0, -1):
        t = step - 1
        if paired:
            if frozen_proj is not None:
                proj_free = frozen_proj
            else:
                proj_free = model.condition_projection(draw(ctx_shape))
            pair = model.predict_pair(x, proj_ctx, proj_free, t)
            eps_cond = np.asarray(pair[0], dtype=dtype)
            eps_free = np.asarray(pair[1], dtype=dtype)
        else:
            eps_c = frozen if frozen is not None else draw(ctx_shape)
            eps_cond = _predict_cases(model, x, contexts, t, dtype)
            eps_free = _predict_cases(model, x, eps_c, t, dtype)
        p_mean = posterior_mean(x, eps_cond, t, sched)
        g_mean = posterior_mean(x, eps_free, t, sched)
        if mode == "precision":
            queue.append(predict_x0(x, eps_free, t, sched))
            window = list(queue)[-cfg.window:]
            if len(window) == 1:
                variance = np.zeros_like(x)
            else:
                variance = np.stack(window).var(axis=0)
            flat = variance.reshape(n_cases, -1)
            mu = flat.mean(axis=1)
            sd = flat.std(axis=1)
            degenerate = sd < 1e-12
            safe_sd = np.where(degenerate, 1.0, sd)
            expand = (slice(None),) + (None,) * (variance.ndim - 1)
            z = (variance - mu[expand]) / safe_sd[expand]
            weights = cfg.lam * np.clip(z, cfg.clip_lo, cfg.clip_hi) + 1.0
            weights[degenerate] = 1.0
            if weights.min() < lo or weights.max() > hi:
                raise StateError(
                    f"weight field escaped [{lo}, {hi}] at step {step}: "
                    f"[{weights.min()}, {weights.max()}]"
                )
            if history is not None:
                history.append(weights[history_case])
            x = g_mean + weights * (p_mean - g_mean)
        else:
            x = g_mean + guidance_scale * (p_mean - g_mean)
        if cfg.stochastic_step and t > 0:
            x = x + np.sqrt(float(sched.betas[t])) * draw(shape)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state after reverse step {step}", step=step)
    return x, variance, history


def monte_carlo_precision(context, model, sched: NoiseSchedule, cfg: SamplerConfig,
                          members: int, shape) -> np.ndarray:
    """Baseline imprecision estimate: variance across independent forecasts.

    Runs ``members`` precision-weighted samples with seeds cfg.seed + i and
    returns the per-coordinate population variance of the forecasts.
    """
    if members < 2:
        raise ParameterError(f"members must be >= 2, got {members}")
    forecasts = []
    for i in range(members):
        member_cfg = replace(cfg, seed=cfg.seed + i)
        result = sample_precision_weighted(context, model, sched, member_cfg, shape,
                                           record_weights=False)
        forecasts.append(result.forecast)
    return np.stack(forecasts).var(axis=0)
