"""Sampling against the exactly solvable Gaussian predictor.

For pixel data drawn i.i.d. from N(0, 1) the optimal noise prediction is
known in closed form, and every marginal of the forward process is standard
normal. Running the reverse process with that predictor must therefore
reproduce N(0, 1) statistics, which makes it a strong end-to-end check of the
sampler plumbing without any training.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from diffcast import GaussianOracleDenoiser, SamplerConfig, cosine_schedule, sample_precision_weighted

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

sched = cosine_schedule(200)
oracle = GaussianOracleDenoiser(sched, prior_var=1.0, uncond_mean=0.0)
shape = (4, 1, 64, 64)
context = np.zeros((2, 1, 64, 64))  # uninformative for the unconditional oracle

for stochastic in (True, False):
    cfg = SamplerConfig(steps=200, lam=0.0, stochastic_step=stochastic, seed=9)
    x = sample_precision_weighted(context, oracle, sched, cfg, shape).forecast
    print(f"stochastic={stochastic}: mean={x.mean():+.4f} var={x.var():.4f} "
          f"(n={x.size})")
    if stochastic:
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.hist(x.ravel(), bins=80, density=True, alpha=0.7, label="samples")
        grid = np.linspace(-4, 4, 200)
        ax.plot(grid, np.exp(-grid ** 2 / 2) / np.sqrt(2 * np.pi), "k--", label="N(0,1)")
        ax.legend()
        ax.set_title("reverse-process output vs target density")
        fig.tight_layout()
        fig.savefig(OUT / "oracle_histogram.png", dpi=120)
        print(f"wrote {OUT / 'oracle_histogram.png'}")

# The deterministic mean-only variant contracts toward the prior mean: the
# variance collapses while the mean stays at zero.
