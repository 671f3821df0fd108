"""Noise predictors: an exactly solvable Gaussian oracle and a small convnet.

Both expose ``predict(x_t, cond, t, rng=None) -> eps`` where ``x_t`` is the
corrupted target (N, C, H, W), ``cond`` the conditioning frames (N0, C, H, W)
or None for the unconditional branch, and ``t`` a 0-based schedule index.

The convnet is written directly in numpy with explicit backpropagation so its
gradients can be verified against finite differences; there is no autograd
dependency.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .diffusion import ContextField
from .errors import DegenerateStepError, ParameterError, ShapeError
from .schedule import NoiseSchedule


def _context_data(cond):
    if isinstance(cond, ContextField):
        return cond.data
    return cond


class GaussianOracleDenoiser:
    """Closed-form optimal noise predictor for i.i.d. Gaussian pixel data.

    Assumes clean fields with independent pixels x0 ~ N(mu0, prior_var). The
    posterior mean given a corrupted field at level t is

        E[x0 | x_t] = mu0 + (sqrt(a_bar) * v / (a_bar * v + 1 - a_bar))
                          * (x_t - sqrt(a_bar) * mu0)

    and the implied noise estimate is
    (x_t - sqrt(a_bar) * E[x0 | x_t]) / sqrt(1 - a_bar).

    ``prior_mean_fn`` maps a condition tensor to mu0; when it is None, or the
    condition is absent, a fixed ``uncond_mean`` is used instead.
    """

    def __init__(self, sched: NoiseSchedule, prior_var: float = 1.0,
                 prior_mean_fn=None, uncond_mean: float = 0.0):
        if prior_var <= 0.0:
            raise ParameterError(f"prior_var must be positive, got {prior_var!r}")
        self.sched = sched
        self.prior_var = float(prior_var)
        self.prior_mean_fn = prior_mean_fn
        self.uncond_mean = float(uncond_mean)

    def posterior_mean_x0(self, x_t: np.ndarray, cond, t: int) -> np.ndarray:
        a_bar = self.sched.alpha_bars[t]
        cond = _context_data(cond)
        if cond is not None and self.prior_mean_fn is not None:
            mu0 = np.asarray(self.prior_mean_fn(cond), dtype=np.float64)
        else:
            mu0 = self.uncond_mean
        gain = np.sqrt(a_bar) * self.prior_var / (a_bar * self.prior_var + 1.0 - a_bar)
        return mu0 + gain * (x_t - np.sqrt(a_bar) * mu0)

    def predict(self, x_t: np.ndarray, cond=None, t: int = 0, rng=None) -> np.ndarray:
        a_bar = self.sched.alpha_bars[t]
        if a_bar >= 1.0:
            raise DegenerateStepError(f"alpha_bar[{t}] = 1; noise estimate has 0 denominator")
        x0_hat = self.posterior_mean_x0(x_t, cond, t)
        return (x_t - np.sqrt(a_bar) * x0_hat) / np.sqrt(1.0 - a_bar)


# ---------------------------------------------------------------------------
# Convolutional noise predictor with hand-written backprop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvArchitecture:
    """Descriptor for the convnet: shapes fixed, weights live elsewhere.

    The network consumes the corrupted target frames and the conditioning
    frames flattened into channels, plus ``emb_channels`` sinusoidal features
    of the normalized step index broadcast over the grid; three same-padded
    conv layers with tanh feed a linear 1x1 head that emits one channel per
    target frame/channel pair.
    """

    target_frames: int
    context_frames: int
    channels: int
    height: int
    width: int
    hidden: int = 8
    kernel: int = 3
    emb_channels: int = 8
    activation: str = "tanh"
    total_steps: int = 200

    def __post_init__(self):
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ParameterError(f"kernel must be odd and positive, got {self.kernel}")
        if self.emb_channels % 2 != 0 or self.emb_channels < 2:
            raise ParameterError(f"emb_channels must be a positive even count, got {self.emb_channels}")
        if self.activation != "tanh":
            raise ParameterError(f"unsupported activation {self.activation!r}")
        for name in ("target_frames", "context_frames", "channels", "height", "width",
                     "hidden", "total_steps"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")

    @property
    def in_channels(self) -> int:
        return (self.target_frames + self.context_frames) * self.channels + self.emb_channels

    @property
    def out_channels(self) -> int:
        return self.target_frames * self.channels

    @property
    def target_shape(self) -> tuple:
        return (self.target_frames, self.channels, self.height, self.width)

    @property
    def context_shape(self) -> tuple:
        return (self.context_frames, self.channels, self.height, self.width)

    def param_specs(self) -> list:
        """(name, shape) pairs in storage order; also the checkpoint layout."""
        k, h = self.kernel, self.hidden
        return [
            ("conv1.w", (h, self.in_channels, k, k)),
            ("conv1.b", (h,)),
            ("conv2.w", (h, h, k, k)),
            ("conv2.b", (h,)),
            ("conv3.w", (h, h, k, k)),
            ("conv3.b", (h,)),
            ("head.w", (self.out_channels, h, 1, 1)),
            ("head.b", (self.out_channels,)),
        ]

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.param_specs())

    def to_dict(self) -> dict:
        return asdict(self)


# Activations flow through the conv stack in (channels, batch, H, W) layout:
# the im2col matrix then builds from contiguous slice copies and all reshapes
# around the matmuls are views.

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Same-padded sliding windows of ``x`` (C,B,H,W) as a (C*k*k, B*H*W) matrix."""
    p = k // 2
    C, B, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((C, k, k, B, H, W), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, :, dy:dy + H, dx:dx + W]
    return cols.reshape(C * k * k, B * H * W)


def _conv_forward(x, w, b):
    C, B, H, W = x.shape
    O, _, k, _ = w.shape
    # 1x1 kernels need no window extraction
    cols = x.reshape(C, -1) if k == 1 else _im2col(x, k)
    out = w.reshape(O, -1) @ cols + b[:, None]
    return out.reshape(O, B, H, W), cols


def _conv_backward(g, cols, w, x_shape):
    C, B, H, W = x_shape
    O, _, k, _ = w.shape
    g2 = g.reshape(O, -1)
    dw = (g2 @ cols.T).reshape(w.shape)
    db = g2.sum(axis=1)
    dcols = (w.reshape(O, -1).T @ g2).reshape(C, k, k, B, H, W)
    p = k // 2
    dxp = np.zeros((C, B, H + 2 * p, W + 2 * p), dtype=g.dtype)
    for dy in range(k):
        for dx in range(k):
            dxp[:, :, dy:dy + H, dx:dx + W] += dcols[:, dy, dx]
    return dw, db, dxp[:, :, p:p + H, p:p + W]


def step_embedding(t, total_steps: int, emb_channels: int) -> np.ndarray:
    """Sinusoidal features of (t+1)/total_steps; shape (len(t), emb_channels)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    tau = (t + 1.0) / total_steps
    pairs = emb_channels // 2
    freqs = np.pi * (2.0 ** np.arange(pairs))
    ang = tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ConvDenoiser:
    """Three tanh conv layers plus a linear head, parameters in named arrays.

    ``dtype`` sets the compute precision: float64 for gradient verification,
    float32 for roughly twice the training/inference throughput. Either way
    every run is deterministic for fixed inputs.
    """

    def __init__(self, arch: ConvArchitecture, weights: dict | None = None,
                 dtype=np.float64):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ParameterError(f"dtype must be float32 or float64, got {dtype!r}")
        if weights is None:
            raise ParameterError("weights required; use ConvDenoiser.initialize for fresh ones")
        for name, shape in arch.param_specs():
            if name not in weights:
                raise ParameterError(f"missing parameter {name!r}")
            if tuple(weights[name].shape) != tuple(shape):
                raise ParameterError(
                    f"parameter {name!r}: stored shape {weights[name].shape} != descriptor {shape}"
                )
            if not np.all(np.isfinite(weights[name])):
                raise ParameterError(f"parameter {name!r} contains non-finite entries")
        self.weights = {name: np.asarray(weights[name], dtype=self.dtype)
                        for name, _ in arch.param_specs()}

    @classmethod
    def initialize(cls, arch: ConvArchitecture, rng: np.random.Generator,
                   dtype=np.float64) -> "ConvDenoiser":
        weights = {}
        for name, shape in arch.param_specs():
            if name.endswith(".b"):
                weights[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                weights[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        return cls(arch, weights, dtype=dtype)

    @classmethod
    def zeros(cls, arch: ConvArchitecture, dtype=np.float64) -> "ConvDenoiser":
        return cls(arch, {name: np.zeros(shape) for name, shape in arch.param_specs()},
                   dtype=dtype)

    # -- input assembly ------------------------------------------------------

    def _assemble(self, x_t: np.ndarray, cond: np.ndarray, t) -> np.ndarray:
        """Stack target frames, context frames and step features as input
        channels, in the internal (channels, batch, H, W) layout."""
        a = self.arch
        B = x_t.shape[0]
        if x_t.shape[1:] != a.target_shape:
            raise ShapeError(f"x_t shape {x_t.shape[1:]} != architecture target {a.target_shape}")
        if cond.shape[1:] != a.context_shape:
            raise ShapeError(f"condition shape {cond.shape[1:]} != architecture context {a.context_shape}")
        flat_x = x_t.reshape(B, a.target_frames * a.channels, a.height, a.width)
        flat_c = cond.reshape(B, a.context_frames * a.channels, a.height, a.width)
        emb = step_embedding(t, a.total_steps, a.emb_channels).astype(self.dtype)
        if emb.shape[0] == 1 and B > 1:
            emb = np.repeat(emb, B, axis=0)
        emb_maps = np.broadcast_to(
            emb.T[:, :, None, None], (a.emb_channels, B, a.height, a.width)
        )
        return np.concatenate(
            [flat_x.transpose(1, 0, 2, 3), flat_c.transpose(1, 0, 2, 3), emb_maps], axis=0
        )

    def _forward(self, X: np.ndarray):
        w = self.weights
        z1, cols1 = _conv_forward(X, w["conv1.w"], w["conv1.b"])
        h1 = np.tanh(z1)
        z2, cols2 = _conv_forward(h1, w["conv2.w"], w["conv2.b"])
        h2 = np.tanh(z2)
        z3, cols3 = _conv_forward(h2, w["conv3.w"], w["conv3.b"])
        h3 = np.tanh(z3)
        out, cols4 = _conv_forward(h3, w["head.w"], w["head.b"])
        cache = (X.shape, cols1, h1, cols2, h2, cols3, h3, cols4)
        return out, cache

    # -- public API ----------------------------------------------------------

    def predict_batch(self, x_t: np.ndarray, cond: np.ndarray, t) -> np.ndarray:
        a = self.arch
        X = self._assemble(np.asarray(x_t, dtype=self.dtype),
                           np.asarray(cond, dtype=self.dtype), t)
        out, _ = self._forward(X)
        return out.transpose(1, 0, 2, 3).reshape(
            x_t.shape[0], a.target_frames, a.channels, a.height, a.width
        )

    def predict(self, x_t: np.ndarray, cond=None, t: int = 0, rng=None) -> np.ndarray:
        cond = _context_data(cond)
        if cond is None:
            # Absent condition means the unconditional branch: the slot is
            # filled with standard Gaussian noise, which must come from the
            # caller's stream to keep runs reproducible.
            if rng is None:
                raise ParameterError("unconditional branch needs an rng to draw the noise condition")
            cond = rng.standard_normal(self.arch.context_shape)
        return self.predict_batch(x_t[None], np.asarray(cond)[None], [t])[0]

    # -- paired-branch inference ----------------------------------------------
    #
    # Guidance needs the noise prediction under two conditions for the same
    # x_t. The first conv layer is linear, so its output splits into a shared
    # part (target + step channels) plus a per-condition projection; deeper
    # layers run on the two branches stacked along the batch axis. Results
    # match two plain forwards up to float summation order.

    def _conv1_split(self):
        a = self.arch
        w1 = self.weights["conv1.w"]
        n_x = a.target_frames * a.channels
        n_c = a.context_frames * a.channels
        w_shared = np.concatenate([w1[:, :n_x], w1[:, n_x + n_c:]], axis=1)
        w_ctx = w1[:, n_x:n_x + n_c]
        return w_shared, w_ctx

    def condition_projection(self, cond: np.ndarray) -> np.ndarray:
        """First-layer contribution of condition frames, (hidden, B, H, W).

        Constant across diffusion steps, so samplers compute it once per
        trajectory for the observed context.
        """
        a = self.arch
        cond = np.asarray(cond, dtype=self.dtype)
        if cond.shape[1:] != a.context_shape:
            raise ShapeError(f"condition shape {cond.shape[1:]} != architecture context {a.context_shape}")
        B = cond.shape[0]
        flat_c = cond.reshape(B, a.context_frames * a.channels, a.height, a.width)
        _, w_ctx = self._conv1_split()
        out, _ = _conv_forward(flat_c.transpose(1, 0, 2, 3), w_ctx,
                               np.zeros(a.hidden, dtype=self.dtype))
        return out

    def predict_pair(self, x_t: np.ndarray, proj_a: np.ndarray, proj_b: np.ndarray, t):
        """Noise predictions for two condition projections of the same x_t."""
        a = self.arch
        x_t = np.asarray(x_t, dtype=self.dtype)
        if x_t.shape[1:] != a.target_shape:
            raise ShapeError(f"x_t shape {x_t.shape[1:]} != architecture target {a.target_shape}")
        B = x_t.shape[0]
        flat_x = x_t.reshape(B, a.target_frames * a.channels, a.height, a.width)
        emb = step_embedding(t, a.total_steps, a.emb_channels).astype(self.dtype)
        if emb.shape[0] == 1 and B > 1:
            emb = np.repeat(emb, B, axis=0)
        emb_maps = np.broadcast_to(
            emb.T[:, :, None, None], (a.emb_channels, B, a.height, a.width)
        )
        X = np.concatenate([flat_x.transpose(1, 0, 2, 3), emb_maps], axis=0)
        w_shared, _ = self._conv1_split()
        z_shared, _ = _conv_forward(X, w_shared, self.weights["conv1.b"])
        h1 = np.tanh(np.concatenate([z_shared + proj_a, z_shared + proj_b], axis=1))
        w = self.weights
        z2, _ = _conv_forward(h1, w["conv2.w"], w["conv2.b"])
        h2 = np.tanh(z2)
        z3, _ = _conv_forward(h2, w["conv3.w"], w["conv3.b"])
        h3 = np.tanh(z3)
        out, _ = _conv_forward(h3, w["head.w"], w["head.b"])
        full = out.transpose(1, 0, 2, 3).reshape(
            2 * B, a.target_frames, a.channels, a.height, a.width
        )
        return full[:B], full[B:]

    def loss_and_grads(self, x_t, cond, t, eps_target, loss_norm: str = "L1"):
        """Scalar denoising loss and its gradients w.r.t. every parameter.

        ``loss_norm`` "L1" is mean absolute error against the injected noise,
        "L2" mean squared error.
        """
        X = self._assemble(np.asarray(x_t, dtype=self.dtype),
                           np.asarray(cond, dtype=self.dtype), t)
        out, cache = self._forward(X)
        B = x_t.shape[0]
        O = self.arch.out_channels
        target = np.asarray(eps_target, dtype=self.dtype).reshape(
            B, O, *out.shape[2:]
        ).transpose(1, 0, 2, 3)
        resid = out - target
        if loss_norm == "L1":
            loss = float(np.mean(np.abs(resid)))
            dout = np.sign(resid) / resid.size
        elif loss_norm == "L2":
            loss = float(np.mean(resid ** 2))
            dout = 2.0 * resid / resid.size
        else:
            raise ParameterError(f"loss_norm must be 'L1' or 'L2', got {loss_norm!r}")

        X_shape, cols1, h1, cols2, h2, cols3, h3, cols4 = cache
        w = self.weights
        grads = {}
        grads["head.w"], grads["head.b"], dh3 = _conv_backward(dout, cols4, w["head.w"], h3.shape)
        dz3 = dh3 * (1.0 - h3 ** 2)
        grads["conv3.w"], grads["conv3.b"], dh2 = _conv_backward(dz3, cols3, w["conv3.w"], h2.shape)
        dz2 = dh2 * (1.0 - h2 ** 2)
        grads["conv2.w"], grads["conv2.b"], dh1 = _conv_backward(dz2, cols2, w["conv2.w"], h1.shape)
        dz1 = dh1 * (1.0 - h1 ** 2)
        grads["conv1.w"], grads["conv1.b"], _ = _conv_backward(dz1, cols1, w["conv1.w"], X_shape)
        return loss, grads

    def loss(self, x_t, cond, t, eps_target, loss_norm: str = "L1") -> float:
        X = self._assemble(np.asarray(x_t, dtype=self.dtype),
                           np.asarray(cond, dtype=self.dtype), t)
        out, _ = self._forward(X)
        target = np.asarray(eps_target, dtype=self.dtype).reshape(
            x_t.shape[0], self.arch.out_channels, *out.shape[2:]
        ).transpose(1, 0, 2, 3)
        resid = out - target
        if loss_norm == "L1":
            return float(np.mean(np.abs(resid)))
        if loss_norm == "L2":
            return float(np.mean(resid ** 2))
        raise ParameterError(f"loss_norm must be 'L1' or 'L2', got {loss_norm!r}")


def gradient_check(model: ConvDenoiser, x_t, cond, t, probe_count: int,
                   eps_target=None, h: float = 1e-5, loss_norm: str = "L2",
                   seed: int = 0) -> float:
    """Compare analytic parameter gradients against central finite differences.

    Probes ``probe_count`` randomly chosen scalar parameters (all of them if
    the count exceeds the parameter total) and returns the maximum deviation
    relative to the gradient's overall scale (its infinity norm).
    """
    if probe_count < 1:
        raise ParameterError(f"probe_count must be >= 1, got {probe_count}")
    rng = np.random.default_rng(seed)
    x_t = np.asarray(x_t, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if eps_target is None:
        eps_target = rng.standard_normal((x_t.shape[0],) + model.arch.target_shape)

    _, grads = model.loss_and_grads(x_t, cond, t, eps_target, loss_norm)

    slots = []
    for name, shape in model.arch.param_specs():
        slots.extend((name, idx) for idx in range(int(np.prod(shape))))
    if probe_count >= len(slots):
        probes = slots
    else:
        chosen = rng.choice(len(slots), size=probe_count, replace=False)
        probes = [slots[i] for i in chosen]

    scale = max(max(np.max(np.abs(g)) for g in grads.values()), 1e-12)
    worst = 0.0
    for name, idx in probes:
        flat = model.weights[name].reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + h
        loss_hi = model.loss(x_t, cond, t, eps_target, loss_norm)
        flat[idx] = keep - h
        loss_lo = model.loss(x_t, cond, t, eps_target, loss_norm)
        flat[idx] = keep
        fd = (loss_hi - loss_lo) / (2.0 * h)
        analytic = grads[name].reshape(-1)[idx]
        worst = max(worst, abs(analytic - fd) / scale)
    return worst
