"""Seeded generators for the two synthetic forecasting tasks.

Glyph task: solid bitmap glyphs translate with elastic wall reflection and
rotate with constant angular velocity on a square grid; frames are the
max-composition of the glyph stamps, values in [0, 1].

Flow task: a divergence-free multi-vortex velocity field advects itself
(semi-Lagrangian back-tracing with periodic bilinear interpolation), with
optional diffusive smoothing. Channels are the (u, v) velocity components.

Every sample is reproducible from (config seed, sample id).
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass
class GriddedSequence:
    """One spatiotemporal sample: (frames, channels, H, W) plus bookkeeping."""

    data: np.ndarray
    frame_interval: float = 1.0
    split: str = ""
    sample_id: int = 0
    seed: int = 0
    context_frames: int = 0

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeError(f"sequence must be (F, C, H, W), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("sequence contains non-finite values")


# -- glyph task ---------------------------------------------------------------

_GLYPH_ART = [
    # 9x9 solid shapes; '#' marks filled pixels
    ["#########",
     "#########",
     "#########",
     "#########",
     "#########",
     "#########",
     "#########",
     "#########",
     "#########"],
    ["....#....",
     "...###...",
     "..#####..",
     ".#######.",
     "#########",
     ".#######.",
     "..#####..",
     "...###...",
     "....#...."],
    ["...###...",
     "...###...",
     "...###...",
     "#########",
     "#########",
     "#########",
     "...###...",
     "...###...",
     "...###..."],
    ["#########",
     "#########",
     "##.....##",
     "##.....##",
     "##.....##",
     "##.....##",
     "##.....##",
     "#########",
     "#########"],
    ["##.....##",
     "##.....##",
     "##.....##",
     "#########",
     "#########",
     "##.....##",
     "##.....##",
     "##.....##",
     "##.....##"],
    ["#########",
     "#########",
     "...###...",
     "...###...",
     "...###...",
     "...###...",
     "...###...",
     "...###...",
     "...###..."],
    ["###......",
     "###......",
     "###......",
     "###......",
     "###......",
     "###......",
     "###......",
     "#########",
     "#########"],
    ["##.....##",
     "###...###",
     ".###.###.",
     "..#####..",
     "...###...",
     "..#####..",
     ".###.###.",
     "###...###",
     "##.....##"],
]


def _rasterize(art) -> np.ndarray:
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in art])


def _pad_for_rotation(bitmap: np.ndarray) -> np.ndarray:
    # Pad so the content's circumscribed circle fits the box at any angle.
    side = bitmap.shape[0]
    box = int(np.ceil(side * np.sqrt(2.0)))
    if (box - side) % 2 == 1:
        box += 1
    pad = (box - side) // 2
    return np.pad(bitmap, pad)


GLYPHS = [_pad_for_rotation(_rasterize(a)) for a in _GLYPH_ART]
GLYPH_BOX = GLYPHS[0].shape[0]


def rotate_bitmap(bitmap: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the box center by nearest-neighbor resampling."""
    side = bitmap.shape[0]
    c = (side - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(side), np.arange(side))
    cos, sin = np.cos(angle), np.sin(angle)
    # inverse map: output pixel -> source pixel
    src_i = cos * (ii - c) + sin * (jj - c) + c
    src_j = -sin * (ii - c) + cos * (jj - c) + c
    si = np.rint(src_i).astype(int)
    sj = np.rint(src_j).astype(int)
    valid = (si >= 0) & (si < side) & (sj >= 0) & (sj < side)
    out = np.zeros_like(bitmap)
    out[valid] = bitmap[si[valid], sj[valid]]
    return out


@dataclass(frozen=True)
class GlyphTaskConfig:
    grid: int = 32
    num_glyphs: int = 2
    frames: int = 20
    context_frames: int = 4
    translate: bool = True
    reflect: bool = True
    rotate: bool = True
    speed_min: float = 0.5
    speed_max: float = 1.5
    max_spin: float = 0.25
    frame_interval: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.grid < GLYPH_BOX:
            raise ParameterError(
                f"grid {self.grid} cannot hold a glyph stamp of side {GLYPH_BOX}"
            )
        if self.num_glyphs < 1:
            raise ParameterError("num_glyphs must be >= 1")
        if not 1 <= self.context_frames < self.frames:
            raise ParameterError("need 1 <= context_frames < frames")
        if not 0.0 <= self.speed_min <= self.speed_max:
            raise ParameterError("need 0 <= speed_min <= speed_max")


@dataclass
class GlyphMotion:
    """Scripted trajectory of one glyph (used directly by tests)."""

    glyph_index: int
    center: np.ndarray          # float (row, col)
    velocity: np.ndarray        # pixels per frame
    angle: float = 0.0
    spin: float = 0.0           # radians per frame


def _sample_motions(cfg: GlyphTaskConfig, rng: np.random.Generator) -> list:
    margin = GLYPH_BOX / 2.0
    motions = []
    for _ in range(cfg.num_glyphs):
        idx = int(rng.integers(0, len(GLYPHS)))
        center = rng.uniform(margin, cfg.grid - margin, size=2)
        if cfg.translate:
            speed = rng.uniform(cfg.speed_min, cfg.speed_max)
            theta = rng.uniform(0.0, 2.0 * np.pi)
            velocity = speed * np.array([np.sin(theta), np.cos(theta)])
        else:
            velocity = np.zeros(2)
        if cfg.rotate:
            angle = rng.uniform(0.0, 2.0 * np.pi)
            spin = rng.uniform(-cfg.max_spin, cfg.max_spin)
        else:
            angle, spin = 0.0, 0.0
        motions.append(GlyphMotion(idx, center, velocity, angle, spin))
    return motions


def _advance(pos: float, vel: float, lo: float, hi: float, reflect: bool):
    pos = pos + vel
    if reflect:
        while pos < lo or pos > hi:
            if pos < lo:
                pos = 2.0 * lo - pos
            else:
                pos = 2.0 * hi - pos
            vel = -vel
    else:
        if pos < lo:
            pos, vel = lo, 0.0
        elif pos > hi:
            pos, vel = hi, 0.0
    return pos, vel


def render_glyph_sequence(cfg: GlyphTaskConfig, motions: list) -> np.ndarray:
    """Render (frames, 1, grid, grid) from explicit glyph trajectories."""
    cfg.validate()
    margin = GLYPH_BOX / 2.0
    lo, hi = margin, cfg.grid - margin
    motions = [dataclasses.replace(m, center=np.array(m.center, dtype=float),
                                   velocity=np.array(m.velocity, dtype=float))
               for m in motions]
    frames = np.zeros((cfg.frames, 1, cfg.grid, cfg.grid))
    for f in range(cfg.frames):
        canvas = frames[f, 0]
        for m in motions:
            stamp = rotate_bitmap(GLYPHS[m.glyph_index], m.angle) if m.angle else GLYPHS[m.glyph_index]
            # round-half-up keeps unit motion stepping uniform at the .5
            # corner offsets an odd stamp side produces
            top = int(np.floor(m.center[0] - margin + 0.5))
            left = int(np.floor(m.center[1] - margin + 0.5))
            top = min(max(top, 0), cfg.grid - GLYPH_BOX)
            left = min(max(left, 0), cfg.grid - GLYPH_BOX)
            region = canvas[top:top + GLYPH_BOX, left:left + GLYPH_BOX]
            np.maximum(region, stamp, out=region)
        for m in motions:
            m.center[0], m.velocity[0] = _advance(m.center[0], m.velocity[0], lo, hi, cfg.reflect)
            m.center[1], m.velocity[1] = _advance(m.center[1], m.velocity[1], lo, hi, cfg.reflect)
            m.angle += m.spin
    return frames


def generate_glyph_dataset(cfg: GlyphTaskConfig, count: int) -> list:
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    cfg.validate()
    sequences = []
    for sample_id in range(count):
        rng = np.random.default_rng([cfg.seed, sample_id])
        motions = _sample_motions(cfg, rng)
        data = render_glyph_sequence(cfg, motions)
        sequences.append(GriddedSequence(
            data=data, frame_interval=cfg.frame_interval, sample_id=sample_id,
            seed=cfg.seed, context_frames=cfg.context_frames,
        ))
    return sequences


# -- flow task ----------------------------------------------------------------

@dataclass(frozen=True)
class FlowTaskConfig:
    grid: int = 64
    frames: int = 15
    context_frames: int = 4
    vortex_count: int = 4
    smoothing: float = 0.05
    max_speed: float = 2.0
    frame_interval: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.grid < 8:
            raise ParameterError("grid must be >= 8")
        if not 1 <= self.context_frames < self.frames:
            raise ParameterError("need 1 <= context_frames < frames")
        if self.vortex_count < 0:
            raise ParameterError("vortex_count must be >= 0")
        if not 0.0 <= self.smoothing <= 0.25:
            # 0.25 keeps the 5-point diffusion step a convex combination
            raise ParameterError("smoothing must lie in [0, 0.25]")
        if self.max_speed < 0.0:
            raise ParameterError("max_speed must be >= 0")


def vortex_field(grid: int, centers, radii, strengths) -> np.ndarray:
    """Divergence-free velocity field from Gaussian stream functions.

    Each vortex contributes psi = s * r * exp(-d^2 / (2 r^2)); the velocity is
    (u, v) = (d psi / dy, -d psi / dx), summed over vortices.
    """
    jj, ii = np.meshgrid(np.arange(grid, dtype=float), np.arange(grid, dtype=float))
    u = np.zeros((grid, grid))
    v = np.zeros((grid, grid))
    for (cy, cx), r, s in zip(centers, radii, strengths):
        dy, dx = ii - cy, jj - cx
        envelope = np.exp(-(dy * dy + dx * dx) / (2.0 * r * r))
        u += -s * dy / r * envelope
        v += s * dx / r * envelope
    return np.stack([u, v])


def _bilinear_periodic(field: np.ndarray, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    H, W = field.shape
    y0 = np.floor(yy).astype(int)
    x0 = np.floor(xx).astype(int)
    fy = yy - y0
    fx = xx - x0
    y0 %= H
    x0 %= W
    y1 = (y0 + 1) % H
    x1 = (x0 + 1) % W
    return (field[y0, x0] * (1 - fy) * (1 - fx)
            + field[y0, x1] * (1 - fy) * fx
            + field[y1, x0] * fy * (1 - fx)
            + field[y1, x1] * fy * fx)


def advect(vel: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """Semi-Lagrangian self-advection of a (2, H, W) velocity field."""
    u, v = vel[0], vel[1]
    H, W = u.shape
    jj, ii = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    yd = ii - dt * u
    xd = jj - dt * v
    return np.stack([_bilinear_periodic(u, yd, xd), _bilinear_periodic(v, yd, xd)])


def _diffuse(vel: np.ndarray, kappa: float) -> np.ndarray:
    lap = (np.roll(vel, 1, axis=-1) + np.roll(vel, -1, axis=-1)
           + np.roll(vel, 1, axis=-2) + np.roll(vel, -1, axis=-2) - 4.0 * vel)
    return vel + kappa * lap


def simulate_flow(initial: np.ndarray, frames: int, smoothing: float, dt: float = 1.0) -> np.ndarray:
    """Roll a (2, H, W) field forward; returns (frames, 2, H, W) incl. frame 0."""
    out = np.empty((frames,) + initial.shape)
    out[0] = initial
    vel = initial
    for f in range(1, frames):
        vel = advect(vel, dt)
        if smoothing > 0.0:
            vel = _diffuse(vel, smoothing)
        out[f] = vel
    return out


def generate_flow_dataset(cfg: FlowTaskConfig, count: int) -> list:
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    cfg.validate()
    sequences = []
    for sample_id in range(count):
        rng = np.random.default_rng([cfg.seed, sample_id])
        centers = rng.uniform(0.0, cfg.grid, size=(cfg.vortex_count, 2))
        radii = rng.uniform(cfg.grid / 16.0, cfg.grid / 6.0, size=cfg.vortex_count)
        strengths = rng.uniform(0.5, 1.0, size=cfg.vortex_count) * rng.choice([-1.0, 1.0], size=cfg.vortex_count)
        vel = vortex_field(cfg.grid, centers, radii, strengths)
        peak = float(np.max(np.hypot(vel[0], vel[1])))
        if peak > 0.0:
            vel = vel * (cfg.max_speed / peak)
        data = simulate_flow(vel, cfg.frames, cfg.smoothing)
        sequences.append(GriddedSequence(
            data=data, frame_interval=cfg.frame_interval, sample_id=sample_id,
            seed=cfg.seed, context_frames=cfg.context_frames,
        ))
    return sequences


# -- splits -------------------------------------------------------------------

def split_dataset(sequences, fractions, seed: int = 0):
    """Disjoint, seed-stable train/val/test partition.

    Counts use largest-remainder allocation so exact divisions come out exact.
    A strictly positive fraction that would receive zero samples is an error.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ParameterError(f"fractions must have 3 entries, got {len(fractions)}")
    if any(f < 0.0 for f in fractions):
        raise ParameterError("fractions must be >= 0")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must sum to 1, got {sum(fractions)!r}")
    n = len(sequences)
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainders = [r - c for r, c in zip(raw, counts)]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    for f, c, name in zip(fractions, counts, ("train", "val", "test")):
        if f > 0.0 and c == 0:
            raise ParameterError(f"{name} fraction {f} yields an empty split for {n} samples")

    order = np.random.default_rng(seed).permutation(n)
    splits = []
    start = 0
    for c, name in zip(counts, ("train", "val", "test")):
        members = [dataclasses.replace(sequences[i], split=name) for i in order[start:start + c]]
        splits.append(members)
        start += c
    return tuple(splits)
