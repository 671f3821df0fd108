"""Noise schedules and the forward corruption process.

Constructs the cosine and a linear schedule, compares their cumulative
signal-retention curves, and shows a glyph frame being corrupted toward pure
noise. Writes PNGs into demos/output/.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from diffcast import GlyphTaskConfig, cosine_schedule, forward_sample, generate_glyph_dataset, linear_schedule

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

T = 200
cosine = cosine_schedule(T)
linear = linear_schedule(T, 1e-4, 0.02)

fig, axes = plt.subplots(1, 2, figsize=(10, 4))
axes[0].plot(cosine.alpha_bars, label="cosine")
axes[0].plot(linear.alpha_bars, label="linear")
axes[0].set_xlabel("step t")
axes[0].set_ylabel("alpha_bar(t)")
axes[0].set_title("signal retention")
axes[0].legend()
axes[1].plot(cosine.betas, label="cosine")
axes[1].plot(linear.betas, label="linear")
axes[1].set_xlabel("step t")
axes[1].set_ylabel("beta(t)")
axes[1].set_title("per-step noise")
axes[1].legend()
fig.tight_layout()
fig.savefig(OUT / "schedules.png", dpi=120)
print(f"cosine: alpha_bar[0]={cosine.alpha_bars[0]:.5f}, alpha_bar[-1]={cosine.alpha_bars[-1]:.2e}")

# corrupt one glyph frame at increasing noise levels
frame = generate_glyph_dataset(GlyphTaskConfig(grid=32, seed=3), 1)[0].data[4]
rng = np.random.default_rng(0)
levels = [0, 40, 80, 120, 160, 199]
fig, axes = plt.subplots(1, len(levels), figsize=(3 * len(levels), 3))
for ax, t in zip(axes, levels):
    corrupted = forward_sample(frame[None], t, rng.standard_normal((1,) + frame.shape), cosine)
    ax.imshow(corrupted[0, 0], cmap="gray")
    ax.set_title(f"t={t + 1}")
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "forward_corruption.png", dpi=120)
print(f"wrote {OUT / 'schedules.png'} and {OUT / 'forward_corruption.png'}")
