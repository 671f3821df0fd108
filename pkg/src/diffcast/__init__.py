"""Precision-weighted diffusion forecasting for gridded spatiotemporal fields.

The package provides diffusion noise schedules, the forward/reverse algebra,
pluggable noise predictors (an analytic Gaussian oracle and a small trainable
convnet), a reverse-process sampler whose guidance weights come from the
per-coordinate variance of recent clean-field estimates, synthetic motion
datasets, and an ensemble forecast verification suite. The ``diffcast`` CLI
orchestrates the pipeline with reproducibility manifests.
"""

__version__ = "0.1.0"

from .datagen import (
    FlowTaskConfig,
    GlyphTaskConfig,
    GriddedSequence,
    generate_flow_dataset,
    generate_glyph_dataset,
    split_dataset,
)
from .denoiser import ConvArchitecture, ConvDenoiser, GaussianOracleDenoiser, gradient_check
from .diffusion import ContextField, LatentState, forward_sample, posterior_mean, predict_x0
from .metrics import (
    ContingencyTable,
    EnsembleForecast,
    crps_ensemble,
    csi,
    csi_neighborhood,
    economic_value,
    fss,
    pooled_crps,
    psd_radial,
    rmse_mae,
)
from .sampler import (
    ForecastResult,
    PrecisionQueue,
    SamplerConfig,
    guidance_field,
    inverse_precision,
    monte_carlo_precision,
    normalize_weights,
    sample_constant_guidance,
    sample_precision_weighted,
)
from .schedule import NoiseSchedule, cosine_schedule, linear_schedule
from .training import TrainConfig, TrainHistory, train_denoiser

__all__ = [
    "__version__",
    "NoiseSchedule", "cosine_schedule", "linear_schedule",
    "ContextField", "LatentState", "forward_sample", "predict_x0", "posterior_mean",
    "ConvArchitecture", "ConvDenoiser", "GaussianOracleDenoiser", "gradient_check",
    "TrainConfig", "TrainHistory", "train_denoiser",
    "SamplerConfig", "PrecisionQueue", "ForecastResult",
    "guidance_field", "inverse_precision", "normalize_weights",
    "sample_precision_weighted", "sample_constant_guidance", "monte_carlo_precision",
    "GriddedSequence", "GlyphTaskConfig", "FlowTaskConfig",
    "generate_glyph_dataset", "generate_flow_dataset", "split_dataset",
    "EnsembleForecast", "ContingencyTable",
    "crps_ensemble", "pooled_crps", "csi", "csi_neighborhood", "fss",
    "psd_radial", "economic_value", "rmse_mae",
]
