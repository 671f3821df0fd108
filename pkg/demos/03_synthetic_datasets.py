"""The two synthetic forecasting tasks.

Glyphs: solid shapes translating with wall bounces and rotating in place,
composed by maximum into binary frames. Flow: a divergence-free multi-vortex
velocity field advecting itself. Both are fully determined by (seed, sample).
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from diffcast import FlowTaskConfig, GlyphTaskConfig, generate_flow_dataset, generate_glyph_dataset, split_dataset

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

glyphs = generate_glyph_dataset(GlyphTaskConfig(grid=32, num_glyphs=2, seed=7), 4)
fig, axes = plt.subplots(4, 10, figsize=(20, 8))
for row, seq in enumerate(glyphs):
    for col in range(10):
        axes[row, col].imshow(seq.data[2 * col, 0], cmap="gray")
        axes[row, col].axis("off")
fig.suptitle("glyph sequences (every 2nd frame)")
fig.tight_layout()
fig.savefig(OUT / "glyph_mosaic.png", dpi=100)

flows = generate_flow_dataset(FlowTaskConfig(grid=64, seed=7), 2)
fig, axes = plt.subplots(2, 8, figsize=(18, 5))
for row, seq in enumerate(flows):
    speed = np.hypot(seq.data[:, 0], seq.data[:, 1])
    for col in range(8):
        axes[row, col].imshow(speed[2 * col], cmap="viridis")
        axes[row, col].axis("off")
        axes[row, col].set_title(f"f{2 * col}", fontsize=8)
fig.suptitle("flow speed magnitude (every 2nd frame)")
fig.tight_layout()
fig.savefig(OUT / "flow_mosaic.png", dpi=100)

train, val, test = split_dataset(generate_glyph_dataset(GlyphTaskConfig(seed=1), 20),
                                 (0.8, 0.1, 0.1), seed=1)
print(f"split 20 sequences into {len(train)}/{len(val)}/{len(test)}")
energy = (flows[0].data ** 2).sum(axis=(1, 2, 3))
print("flow kinetic energy by frame (non-increasing):",
      np.array2string(energy[:6], precision=1))
print(f"wrote {OUT / 'glyph_mosaic.png'} and {OUT / 'flow_mosaic.png'}")
