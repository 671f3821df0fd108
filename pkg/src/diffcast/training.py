"""Denoiser training: Adam over the noise-prediction objective.

Each step draws a minibatch of sequences, a uniform step index and fresh
Gaussian noise per sample, corrupts the target frames with the forward
process, and regresses the injected noise. Conditions are replaced by fresh
standard Gaussian noise with a configured probability so one network serves
both the conditional and unconditional branches at inference time.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import ConvArchitecture, ConvDenoiser
from .diffusion import forward_sample
from .errors import DivergenceError, ParameterError, ShapeError
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 1000
    batch_size: int = 4
    cond_dropout_prob: float = 0.1
    loss_norm: str = "L1"
    dtype: str = "f32"        # compute precision: "f32" (fast) or "f64"
    seed: int = 0

    def validate(self) -> None:
        if self.dtype not in ("f32", "f64"):
            raise ParameterError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")
        if self.learning_rate < 0.0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate!r}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ParameterError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise ParameterError("adam_eps must be positive")
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.cond_dropout_prob <= 1.0:
            raise ParameterError(f"cond_dropout_prob must lie in [0, 1], got {self.cond_dropout_prob!r}")
        if self.loss_norm not in ("L1", "L2"):
            raise ParameterError(f"loss_norm must be 'L1' or 'L2', got {self.loss_norm!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dropped_conditions: int = 0
    condition_draws: int = 0

    @property
    def dropout_fraction(self) -> float:
        if self.condition_draws == 0:
            return 0.0
        return self.dropped_conditions / self.condition_draws


def _split_sequences(sequences, arch: ConvArchitecture):
    n0, n = arch.context_frames, arch.target_frames
    contexts, targets = [], []
    for seq in sequences:
        data = seq.data if hasattr(seq, "data") else np.asarray(seq)
        if data.shape != (n0 + n, arch.channels, arch.height, arch.width):
            raise ShapeError(
                f"sequence shape {data.shape} incompatible with architecture "
                f"({n0 + n}, {arch.channels}, {arch.height}, {arch.width})"
            )
        contexts.append(np.asarray(data[:n0], dtype=np.float64))
        targets.append(np.asarray(data[n0:], dtype=np.float64))
    return np.stack(contexts), np.stack(targets)


def train_denoiser(sequences, sched: NoiseSchedule, arch: ConvArchitecture,
                   cfg: TrainConfig, callback=None):
    """Train a ConvDenoiser; returns (model, TrainHistory).

    Fully reproducible from cfg.seed: initialization and every sampling
    decision come from one generator in a fixed order. ``callback(step, model)``
    runs after each optimizer step when given (used for periodic checkpoints).
    """
    cfg.validate()
    if len(sequences) == 0:
        raise ParameterError("training dataset is empty")
    if arch.total_steps != sched.T:
        raise ParameterError(
            f"architecture expects {arch.total_steps} schedule steps, schedule has {sched.T}"
        )
    contexts, targets = _split_sequences(sequences, arch)
    n_samples = len(targets)

    rng = np.random.default_rng(cfg.seed)
    dtype = np.float32 if cfg.dtype == "f32" else np.float64
    model = ConvDenoiser.initialize(arch, rng, dtype=dtype)
    m = {k: np.zeros_like(v) for k, v in model.weights.items()}
    v = {k: np.zeros_like(w) for k, w in model.weights.items()}

    losses = np.zeros(cfg.steps)
    dropped = 0
    for step in range(cfg.steps):
        idx = rng.integers(0, n_samples, size=cfg.batch_size)
        ts = rng.integers(0, sched.T, size=cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size,) + arch.target_shape)
        x0 = targets[idx]
        x_t = np.empty_like(x0)
        for i in range(cfg.batch_size):
            x_t[i] = forward_sample(x0[i], int(ts[i]), eps[i], sched)
        cond = contexts[idx].copy()
        drop = rng.random(cfg.batch_size) < cfg.cond_dropout_prob
        n_drop = int(drop.sum())
        if n_drop:
            cond[drop] = rng.standard_normal((n_drop,) + arch.context_shape)
        dropped += n_drop

        loss, grads = model.loss_and_grads(x_t, cond, ts, eps, cfg.loss_norm)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at training step {step}", step=step)
        losses[step] = loss

        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        corr1 = 1.0 - b1 ** (step + 1)
        corr2 = 1.0 - b2 ** (step + 1)
        for name, w in model.weights.items():
            g = grads[name]
            m[name] = b1 * m[name] + (1.0 - b1) * g
            v[name] = b2 * v[name] + (1.0 - b2) * g * g
            w -= cfg.learning_rate * (m[name] / corr1) / (np.sqrt(v[name] / corr2) + cfg.adam_eps)

        if callback is not None:
            callback(step, model)

    history = TrainHistory(
        losses=losses,
        dropped_conditions=dropped,
        condition_draws=cfg.steps * cfg.batch_size,
    )
    return model, history
