"""
Models
Predictive models, checkpoints, the three training regimes and decision-quality evaluation.
"""

from lodl_bench.models.predictive import (
    MODEL_KINDS, PredictiveModel, create_model, default_model_kind, load_model, model_for_domain, predict,
    predict_batch, save_model,
)
from lodl_bench.models.training import (
    REGIMES, EvalResult, TrainConfig, TrainResult, evaluate_dq, train_dfl, train_model, train_two_stage,
    train_with_lodl,
)

__all__ = [
    "MODEL_KINDS", "PredictiveModel", "create_model", "default_model_kind", "load_model", "model_for_domain",
    "predict", "predict_batch", "save_model", "REGIMES", "EvalResult", "TrainConfig", "TrainResult",
    "evaluate_dq", "train_dfl", "train_model", "train_two_stage", "train_with_lodl",
]
