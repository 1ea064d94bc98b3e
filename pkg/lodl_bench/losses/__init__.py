"""
Losses
Locally-optimized decision losses: families, fitting, curvature checks and persistence.
"""

from lodl_bench.losses.families import (
    CONVEX_FAMILIES, FAMILIES, DirectedQuadratic, DirectedWeightedMSE, LossParams, NNLoss, Quadratic,
    WeightedMSE, eval_batch, eval_loss, grad_batch, grad_loss,
)
from lodl_bench.losses.fitting import (
    FitConfig, fit_gd, fit_losses, fit_table, fit_weighted_mse_closed_form,
)
from lodl_bench.losses.psd import PsdReport, psd_certificate
from lodl_bench.losses.store import LossStore

__all__ = [
    "CONVEX_FAMILIES", "FAMILIES", "DirectedQuadratic", "DirectedWeightedMSE", "LossParams", "NNLoss",
    "Quadratic", "WeightedMSE", "eval_batch", "eval_loss", "grad_batch", "grad_loss", "FitConfig",
    "fit_gd", "fit_losses", "fit_table", "fit_weighted_mse_closed_form", "PsdReport", "psd_certificate",
    "LossStore",
]
