"""Long-term treatment effects from short-term outcomes with latent surrogates.

The package fits an identifiable VAE whose latents stand in for unobserved
surrogates, predicts the long-term outcome on experimental units and turns the
predictions into an average treatment effect by inverse propensity weighting.
A semi-synthetic generator, regression baselines and a sweep harness support
benchmarking.
"""

from laser.data import Dataset, GenConfig, generate_world, load_dataset, save_dataset, true_ate
from laser.estimators import (
    METHODS,
    EstimateReport,
    estimate_bd,
    estimate_laser,
    estimate_sind,
    fit_propensity,
    ipw_ate,
    run_method,
)
from laser.evaluation import BenchmarkTable, SweepSpec, align_latents, export_scatter, mape, run_sweep
from laser.model import IvaeModel, TrainConfig, extract_latents, load_model, predict_y, save_model, train

__version__ = "0.1.0"

__all__ = [
    "BenchmarkTable", "Dataset", "EstimateReport", "GenConfig", "IvaeModel", "METHODS", "SweepSpec",
    "TrainConfig", "align_latents", "estimate_bd", "estimate_laser", "estimate_sind", "export_scatter",
    "extract_latents", "fit_propensity", "generate_world", "ipw_ate", "load_dataset", "load_model", "mape",
    "predict_y", "run_method", "run_sweep", "save_dataset", "save_model", "train", "true_ate",
]
