"""The verification metric battery on a controlled toy ensemble.

Builds an "ensemble forecast" by jittering the truth with noise and a spatial
shift, then walks through CRPS, pooled CRPS, CSI (plain and neighborhood),
FSS, RMSE/MAE, the economic value curve, and the radially averaged power
spectrum. The neighborhood scores forgive the small displacement that the
pixel-exact CSI punishes.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from diffcast import (
    GlyphTaskConfig,
    crps_ensemble,
    csi,
    csi_neighborhood,
    economic_value,
    fss,
    generate_glyph_dataset,
    pooled_crps,
    psd_radial,
    rmse_mae,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

rng = np.random.default_rng(0)
truth_cases = [s.data[4:] for s in
               generate_glyph_dataset(GlyphTaskConfig(grid=32, seed=33), 8)]

members_per_case = []
forecast_cases = []
for truth in truth_cases:
    shifted = np.roll(truth, 1, axis=-1)  # one-pixel displacement
    members = np.stack([
        np.clip(shifted + 0.08 * rng.standard_normal(truth.shape), 0, 1)
        for _ in range(4)
    ])
    members_per_case.append(members)
    forecast_cases.append(members.mean(axis=0))

crps_vals = [crps_ensemble(m, t)[1] for m, t in zip(members_per_case, truth_cases)]
pooled_vals = [pooled_crps(m, t, 4, "avg") for m, t in zip(members_per_case, truth_cases)]
print(f"CRPS            {np.mean(crps_vals):.4f}")
print(f"pooled CRPS w4  {np.mean(pooled_vals):.4f}")

threshold = 0.5
plain, table = csi(forecast_cases, truth_cases, threshold)
print(f"CSI (w1)        {plain:.3f}   "
      f"(hits {table.hits}, misses {table.misses}, false alarms {table.false_alarms})")
for window in (3, 5):
    print(f"CSI (w{window})        "
          f"{csi_neighborhood(forecast_cases, truth_cases, threshold, window):.3f}")
    print(f"FSS (w{window})        "
          f"{fss(forecast_cases, truth_cases, threshold, window):.3f}")
scores = rmse_mae(np.stack(forecast_cases), np.stack(truth_cases))
print(f"RMSE {scores.rmse:.4f}  MAE {scores.mae:.4f}")

ratios = np.linspace(0.05, 0.95, 19)
value = economic_value(members_per_case, truth_cases, threshold, ratios)
fig, axes = plt.subplots(1, 2, figsize=(11, 4))
axes[0].plot(value.ratios, value.values, marker="o")
axes[0].axhline(0.0, color="k", lw=0.5)
axes[0].set_xlabel("cost-loss ratio")
axes[0].set_ylabel("relative economic value")
axes[0].set_title(f"hit rate {value.hit_rate:.2f}, false alarm rate {value.false_alarm_rate:.3f}")

k_t, p_t = psd_radial(truth_cases[0][7, 0])
k_f, p_f = psd_radial(forecast_cases[0][7, 0])
axes[1].loglog(k_t[1:], p_t[1:], label="truth")
axes[1].loglog(k_f[1:], p_f[1:], label="forecast")
axes[1].set_xlabel("radial wavenumber")
axes[1].set_ylabel("power")
axes[1].set_title("radially averaged power spectral density")
axes[1].legend()
fig.tight_layout()
fig.savefig(OUT / "verification.png", dpi=120)
print(f"wrote {OUT / 'verification.png'}")
