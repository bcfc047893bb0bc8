"""Two-step occupation-kernel identification of 1-D SDEs.

Drift: kernel ridge regression on mean increments (:mod:`sokid.drift`).
Diffusion-squared: sum-of-squares fit of squared residuals via an SDP
(:mod:`sokid.diffusion`, :mod:`sokid.sdp`).
"""

from .dataset import (IncrementStats, SnapshotEnsemble, TimeGrid, TrajectoryGroup,
                      load_ensemble, mean_increments, save_ensemble)
from .diffusion import (DiffusionModel, eval_diffusion, eval_diffusion_sq, fit_diffusion,
                        moment_matrices, residual_targets, sos_decomposition)
from .drift import DriftModel, drift_cost, eval_drift, fit_drift, occupation_gram
from .kernels import FeatureMapSpec, GaussianKernel
from .simulator import SdeSpec, SimPlan, builtin_sde, draw_initial_conditions, simulate_ensemble

__version__ = "0.1.0"

__all__ = [
    "DiffusionModel", "DriftModel", "FeatureMapSpec", "GaussianKernel", "IncrementStats",
    "SdeSpec", "SimPlan", "SnapshotEnsemble", "TimeGrid", "TrajectoryGroup",
    "builtin_sde", "draw_initial_conditions", "drift_cost", "eval_diffusion",
    "eval_diffusion_sq", "eval_drift", "fit_diffusion", "fit_drift", "load_ensemble",
    "mean_increments", "moment_matrices", "occupation_gram", "residual_targets",
    "save_ensemble", "simulate_ensemble", "sos_decomposition",
]
