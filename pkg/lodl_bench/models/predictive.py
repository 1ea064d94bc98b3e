"""
Predictive Models
Per-item models whose outputs concatenate into the full prediction vector of an instance.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from lodl_bench.domains.base import DomainConfig, InstanceRecord
from lodl_bench.errors import FormatVersionError, MissingArtifactError, ShapeError, TruncatedFileError
from lodl_bench.gradcore import DenseStack, Tape, Tensor, no_record, ops

logger = logging.getLogger(__name__)

MODEL_KINDS = ("linear", "mlp")
MLP_HIDDEN = 500
CHECKPOINT_VERSION = 1

FeatureInput = Union[InstanceRecord, np.ndarray]


@dataclass
class PredictiveModel:
    """A dense stack applied row by row to an instance's (items, features) matrix."""
    kind: str
    network: DenseStack

    @property
    def in_features(self) -> int:
        return self.network.sizes[0]

    @property
    def out_per_item(self) -> int:
        return self.network.sizes[-1]

    def watch(self, tape: Tape) -> Dict[str, Tensor]:
        return self.network.watch(tape)

    def forward_batch(self, features: np.ndarray, params: Optional[Dict] = None) -> Tensor:
        """(B, items, in) features -> (B, items * out) predictions, recorded on the active tape."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 3 or features.shape[-1] != self.in_features:
            raise ShapeError("predict", features.shape, (self.in_features,))
        batch, items, width = features.shape
        out = self.network.forward(features.reshape(batch * items, width), params)
        return ops.reshape(out, (batch, items * self.out_per_item))

    def updated(self, grads: Dict[str, np.ndarray], lr: float) -> "PredictiveModel":
        return PredictiveModel(kind=self.kind, network=self.network.apply_update(grads, lr))

    def slope_intercept(self) -> Optional[Dict[str, float]]:
        """The learned line of a single-feature linear model."""
        if self.kind != "linear" or self.in_features != 1 or self.out_per_item != 1:
            return None
        return {"slope": float(self.network.weights[0][0, 0]), "intercept": float(self.network.biases[0][0])}


def _features(item: FeatureInput) -> np.ndarray:
    return np.asarray(item.features if isinstance(item, InstanceRecord) else item, dtype=np.float64)


def create_model(kind: str, in_features: int, out_per_item: int, rng: np.random.Generator,
                 tanh_output: bool = False, hidden: int = MLP_HIDDEN) -> PredictiveModel:
    """Linear: one dense layer. MLP: two dense layers with ``hidden`` relu units."""
    if kind == "linear":
        sizes = [in_features, out_per_item]
    elif kind == "mlp":
        sizes = [in_features, hidden, out_per_item]
    else:
        raise ValueError(f"Unknown model kind: {kind}")
    return PredictiveModel(kind=kind, network=DenseStack.create(sizes, rng, tanh_output=tanh_output))


def default_model_kind(domain: str) -> str:
    return "linear" if domain == "linear" else "mlp"


def model_for_domain(cfg: DomainConfig, seed: int, kind: Optional[str] = None,
                     hidden: int = MLP_HIDDEN, sample: Optional[InstanceRecord] = None) -> PredictiveModel:
    """A freshly initialized model matching the domain's per-item prediction contract."""
    kind = kind or default_model_kind(cfg.kind)
    if cfg.kind == "webadv":
        in_features, out_per_item = cfg.n_users, cfg.n_users
    elif sample is not None:
        in_features, out_per_item = _features(sample).shape[1], 1
    else:
        in_features, out_per_item = (1, 1) if cfg.kind == "linear" else (21, 1)
    return create_model(kind, in_features, out_per_item, np.random.default_rng(seed),
                        tanh_output=cfg.kind == "portfolio", hidden=hidden)


def predict(model: PredictiveModel, instance: FeatureInput) -> np.ndarray:
    """y_hat for one instance."""
    features = _features(instance)
    with no_record():
        return model.forward_batch(features[None]).data[0].copy()


def predict_batch(model: PredictiveModel, instances: Sequence[FeatureInput]) -> np.ndarray:
    """(B, dim_y) predictions for a list of instances of equal shape."""
    features = np.stack([_features(item) for item in instances])
    with no_record():
        return model.forward_batch(features).data.copy()


# === Checkpoints ===

def save_model(path: Path, model: PredictiveModel, config: Optional[Dict] = None) -> Path:
    """Write a JSON checkpoint atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "sizes": model.network.sizes,
        "tanh_output": model.network.tanh_output,
        "params": model.network.flat().tolist(),
        "config": config or {},
    }
    temp_path = path.with_name(path.name + ".tmp")
    temp_path.write_text(json.dumps(payload))
    os.replace(temp_path, path)
    logger.debug(f"Saved {model.kind} checkpoint to {path}")
    return path


def load_model(path: Path) -> PredictiveModel:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing model checkpoint {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise TruncatedFileError(f"model checkpoint {path} is unreadable: {e}")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise FormatVersionError(
            f"model checkpoint {path} has format version {payload.get('format_version')}, "
            f"expected {CHECKPOINT_VERSION}")
    try:
        network = DenseStack.from_flat(payload["sizes"], np.asarray(payload["params"], dtype=np.float64),
                                       tanh_output=payload["tanh_output"])
    except ValueError as e:
        raise TruncatedFileError(f"model checkpoint {path}: {e}")
    return PredictiveModel(kind=payload["kind"], network=network)


def checkpoint_config(path: Path) -> Dict:
    return json.loads(Path(path).read_text()).get("config", {})


def stack_labels(instances: Sequence[InstanceRecord]) -> np.ndarray:
    return np.stack([np.asarray(i.y_true, dtype=np.float64) for i in instances])


def instance_ids(instances: Sequence[InstanceRecord]) -> List[int]:
    return [i.instance_id for i in instances]
