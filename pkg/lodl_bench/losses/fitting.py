"""
Loss Fitting
Per-instance regression of a loss family onto the decision-quality shortfall of a sample table.

The fitting objective is the mean squared error between the family's value at each
sample and the table's target, with the truth point included as a sample of target 0.
Gradient descent runs in normalized units: residuals are divided by their RMS over
nonzero entries and targets by their RMS, and the fitted parameters are mapped back.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lodl_bench.errors import ConfigError, FitError, NumericalError
from lodl_bench.gradcore import DenseStack, Tape, Tensor, ops
from lodl_bench.losses.families import (
    FAMILIES, NN_HIDDEN, NN_LAYERS, DirectedQuadratic, DirectedWeightedMSE, LossParams, NNLoss, Quadratic,
    WeightedMSE,
)
from lodl_bench.sampling.sampler import SampleTable

logger = logging.getLogger(__name__)

MAX_BACKTRACKS = 40
STEP_GROWTH = 1.5
MAX_SWEEPS = 500


@dataclass
class FitConfig:
    """Gradient-descent settings for fitting learned losses."""
    steps: int = 100
    lr: float = 1.0          # relative to the curvature of the weighted design
    w_min: float = 1e-2
    rank: int = 2
    seed: int = 0
    nn_hidden: int = NN_HIDDEN

    def validate(self):
        if self.steps < 1:
            raise ConfigError(f"fit steps must be at least 1, got {self.steps}", key="fit.steps")
        if not self.w_min > 0:
            raise ConfigError(f"w_min must be positive, got {self.w_min}", key="fit.w_min")
        if self.rank < 1:
            raise ConfigError(f"rank must be at least 1, got {self.rank}", key="fit.rank")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}", key="fit.lr")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class _Design:
    """Normalized regression data for one table."""
    d: np.ndarray          # (n, dim) residuals / scale_d, truth row first
    t: np.ndarray          # (n,) targets / scale_t
    scale_d: float
    scale_t: float

    @property
    def squared(self) -> np.ndarray:
        return self.d * self.d

    @property
    def directed_squared(self) -> np.ndarray:
        sq = self.squared
        return np.concatenate([np.where(self.d >= 0, sq, 0.0), np.where(self.d < 0, sq, 0.0)], axis=1)


def _design(table: SampleTable) -> _Design:
    if table.size == 0:
        raise FitError(f"sample table for instance {table.instance_id} is empty")
    d = np.vstack([np.zeros((1, table.dim_y)), table.samples - table.y_true])
    t = np.concatenate([[0.0], table.targets])
    nonzero = d[d != 0]
    scale_d = float(np.sqrt(np.mean(nonzero ** 2))) if nonzero.size else 1.0
    scale_t = float(np.sqrt(np.mean(t ** 2)))
    return _Design(d=d / scale_d, t=t / scale_t if scale_t > 0 else t, scale_d=scale_d, scale_t=scale_t)


def _curvature(features: np.ndarray) -> float:
    """Largest eigenvalue of (2/n) F'F."""
    gram = 2.0 * features.T @ features / features.shape[0]
    return max(float(np.linalg.eigvalsh(gram)[-1]), 1e-12)


# === Objectives on the tape ===

Objective = Callable[[Dict[str, Tensor]], Tensor]


def _squared_error(prediction: Tensor, target: np.ndarray) -> Tensor:
    return ops.mean(ops.square(ops.sub(prediction, target)))


def _linear_objective(features: np.ndarray, target: np.ndarray) -> Objective:
    return lambda p: _squared_error(ops.matmul(features, p["w"]), target)


def _quadratic_objective(design: _Design, floor: float) -> Objective:
    base = floor * np.sum(design.squared, axis=1)

    def objective(p):
        projected = ops.matmul(design.d, p["L"])
        return _squared_error(ops.add(ops.sum(ops.square(projected), axis=1), base), design.t)
    return objective


def _directed_quadratic_objective(design: _Design, floor: float) -> Objective:
    plus = np.where(design.d >= 0, design.d, 0.0)
    minus = np.where(design.d < 0, -design.d, 0.0)
    base = floor * np.sum(design.squared, axis=1)

    def objective(p):
        a = ops.add(ops.matmul(plus, p["L_pp"]), ops.matmul(minus, p["L_mp"]))
        b = ops.add(ops.matmul(plus, p["L_pm"]), ops.matmul(minus, p["L_mm"]))
        value = ops.add(ops.add(ops.sum(ops.square(a), axis=1), ops.sum(ops.square(b), axis=1)), base)
        return _squared_error(value, design.t)
    return objective


def _nn_objective(design: _Design, depth: int) -> Objective:
    zero = np.zeros((1, design.d.shape[1]))

    def objective(p):
        stack = DenseStack(weights=[p[f"w{i}"] for i in range(depth)], biases=[p[f"b{i}"] for i in range(depth)])
        out = ops.reshape(stack.forward(design.d, p), (design.d.shape[0],))
        offset = ops.take(ops.reshape(stack.forward(zero, p), (1,)), 0)
        return _squared_error(ops.sub(out, offset), design.t)
    return objective


def _value_and_grad(objective: Objective, params: Dict[str, np.ndarray]) -> Tuple[float, Dict[str, np.ndarray]]:
    with Tape() as tape:
        watched = {name: tape.watch(value) for name, value in params.items()}
        root = objective(watched)
        grads = tape.backward(root)
    return root.item(), {name: grads[leaf].data for name, leaf in watched.items()}


def _descend(objective: Objective, params: Dict[str, np.ndarray],
             project: Callable[[Dict[str, np.ndarray]], Dict[str, np.ndarray]],
             steps: int, step_size: float, label: str) -> Tuple[Dict[str, np.ndarray], List[float]]:
    """Projected gradient descent with backtracking; the objective never increases."""
    value, grads = _value_and_grad(objective, params)
    if not np.isfinite(value):
        raise NumericalError(f"{label}: non-finite fitting objective", step=0)
    curve = [value]
    for step in range(1, steps + 1):
        accepted = False
        last_finite = True
        for _ in range(MAX_BACKTRACKS):
            candidate = project({name: params[name] - step_size * grads[name] for name in params})
            try:
                candidate_value, candidate_grads = _value_and_grad(objective, candidate)
            except NumericalError:
                candidate_value = np.inf
            last_finite = bool(np.isfinite(candidate_value))
            if last_finite and candidate_value <= value:
                params, value, grads = candidate, candidate_value, candidate_grads
                step_size *= STEP_GROWTH
                accepted = True
                break
            step_size *= 0.5
        if not accepted:
            if not last_finite:
                raise NumericalError(f"{label}: fitting objective became non-finite", step=step)
            logger.debug(f"{label}: no further decrease after {step - 1} steps")
            break
        curve.append(value)
    return params, curve


# === Families ===

def _identity(p: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return p


def _floor_projection(floor: float):
    return lambda p: {name: np.maximum(value, floor) for name, value in p.items()}


def _nonnegative(p: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name: np.maximum(value, 0.0) for name, value in p.items()}


def _floor_params(family: str, dim: int, cfg: FitConfig) -> LossParams:
    """Best fit to all-zero targets."""
    floor = np.full(dim, cfg.w_min)
    if family == "weightedmse":
        return WeightedMSE(w=floor)
    if family == "directedweightedmse":
        return DirectedWeightedMSE(w_plus=floor, w_minus=floor.copy())
    if family == "quadratic":
        return Quadratic(L=np.zeros((dim, cfg.rank)), w_min=cfg.w_min)
    if family == "directedquadratic":
        zeros = [np.zeros((dim, cfg.rank)) for _ in range(4)]
        return DirectedQuadratic(*zeros, w_min=cfg.w_min)
    network = DenseStack.create([dim] + [cfg.nn_hidden] * (NN_LAYERS - 1) + [1], np.random.default_rng(cfg.seed))
    network.weights[-1] = np.zeros_like(network.weights[-1])
    return NNLoss(network=network)


def fit_gd(table: SampleTable, family: str, cfg: FitConfig) -> LossParams:
    """Fit one family to one table by gradient descent; weights stay >= w_min after every step."""
    if family not in FAMILIES:
        raise ValueError(f"Unknown loss family: {family}")
    cfg.validate()
    design = _design(table)
    dim = table.dim_y
    label = f"{family} fit of instance {table.instance_id}"
    if design.scale_t == 0:
        params = _floor_params(family, dim, cfg)
        params.info.update(final_objective=0.0, steps=0, curve=[0.0])
        return params

    rng = np.random.default_rng([cfg.seed, table.instance_id])
    to_targets = design.scale_t / design.scale_d ** 2
    floor = cfg.w_min / to_targets
    mean_target = max(float(np.mean(design.t)), 0.0)
    mean_energy = float(np.mean(np.sum(design.squared, axis=1)))
    step_size = cfg.lr / _curvature(design.squared)

    if family in ("weightedmse", "directedweightedmse"):
        features = design.squared if family == "weightedmse" else design.directed_squared
        start = max(floor, mean_target / mean_energy) if mean_energy > 0 else floor
        fitted, curve = _descend(_linear_objective(features, design.t),
                                 {"w": np.full(features.shape[1], start)},
                                 _floor_projection(floor), cfg.steps, step_size, label)
        w = np.maximum(fitted["w"] * to_targets, cfg.w_min)
        params = WeightedMSE(w=w) if family == "weightedmse" else \
            DirectedWeightedMSE(w_plus=w[:dim], w_minus=w[dim:])
    elif family == "quadratic":
        scale = np.sqrt(max(mean_target, 1e-12) / (dim * cfg.rank))
        fitted, curve = _descend(_quadratic_objective(design, floor),
                                 {"L": rng.standard_normal((dim, cfg.rank)) * scale},
                                 _identity, cfg.steps, step_size, label)
        params = Quadratic(L=fitted["L"] * np.sqrt(to_targets), w_min=cfg.w_min)
    elif family == "directedquadratic":
        scale = np.sqrt(max(mean_target, 1e-12) / (2 * dim * cfg.rank))
        start = {name: np.abs(rng.standard_normal((dim, cfg.rank))) * scale
                 for name in ("L_pp", "L_pm", "L_mp", "L_mm")}
        fitted, curve = _descend(_directed_quadratic_objective(design, floor), start,
                                 _nonnegative, cfg.steps, step_size, label)
        params = DirectedQuadratic(**{name: value * np.sqrt(to_targets) for name, value in fitted.items()},
                                   w_min=cfg.w_min)
    else:
        network = DenseStack.create([dim] + [cfg.nn_hidden] * (NN_LAYERS - 1) + [1], rng)
        fitted, curve = _descend(_nn_objective(design, NN_LAYERS), network.arrays(),
                                 _identity, cfg.steps, step_size, label)
        network = DenseStack(weights=[fitted[f"w{i}"] for i in range(NN_LAYERS)],
                             biases=[fitted[f"b{i}"] for i in range(NN_LAYERS)])
        params = NNLoss(network=network, scale_in=design.scale_d, scale_out=design.scale_t)

    scale = design.scale_t ** 2
    params.info.update(final_objective=curve[-1] * scale, steps=len(curve) - 1,
                       curve=[value * scale for value in curve])
    logger.debug(f"{label}: objective {curve[0] * scale:.4g} -> {curve[-1] * scale:.4g} in {len(curve) - 1} steps")
    return params


def fit_weighted_mse_closed_form(table: SampleTable, cfg: FitConfig, directed: bool = False) -> LossParams:
    """Non-negative least squares with floor w_min by Gauss-Seidel sweeps over coordinates.

    Each sweep sets w_l = max(w_min, sum_k r_k d_kl / sum_k d_kl^2) with r the target minus the other
    coordinates' contributions; one sweep is exact when every sample perturbs a single coordinate.
    """
    cfg.validate()
    if table.size == 0:
        raise FitError(f"sample table for instance {table.instance_id} is empty")
    d = table.samples - table.y_true
    squared = d * d
    if directed:
        features = np.concatenate([np.where(d >= 0, squared, 0.0), np.where(d < 0, squared, 0.0)], axis=1)
    else:
        features = squared
    targets = table.targets

    weights = np.full(features.shape[1], cfg.w_min)
    column_norms = np.sum(features * features, axis=0)
    residual = targets - features @ weights
    sweeps = 0
    for sweeps in range(1, MAX_SWEEPS + 1):
        largest_change = 0.0
        for col in range(features.shape[1]):
            if column_norms[col] == 0:
                continue
            column = features[:, col]
            updated = max(cfg.w_min, weights[col] + float(column @ residual) / column_norms[col])
            change = updated - weights[col]
            if change != 0.0:
                residual -= column * change
                weights[col] = updated
                largest_change = max(largest_change, abs(change))
        if largest_change <= 1e-12 * max(1.0, float(np.max(weights))):
            break

    objective = float(np.sum(residual ** 2) / (table.size + 1))
    info = {"final_objective": objective, "steps": sweeps, "method": "closed-form"}
    dim = table.dim_y
    if directed:
        return DirectedWeightedMSE(w_plus=weights[:dim], w_minus=weights[dim:], info=info)
    return WeightedMSE(w=weights, info=info)


def fit_table(table: SampleTable, family: str, cfg: FitConfig, method: str = "gd") -> LossParams:
    """Fit by name: ``gd`` for every family, ``closed-form`` for the weighted families."""
    if method == "gd":
        return fit_gd(table, family, cfg)
    if method == "closed-form":
        if family == "weightedmse":
            return fit_weighted_mse_closed_form(table, cfg)
        if family == "directedweightedmse":
            return fit_weighted_mse_closed_form(table, cfg, directed=True)
        raise ValueError(f"No closed form for loss family: {family}")
    raise ValueError(f"Unknown fitting method: {method}")


def fit_losses(tables: Sequence[SampleTable], family: str, cfg: FitConfig,
               workers: int = 1, method: str = "gd") -> Dict[int, LossParams]:
    """One fitted loss per table, keyed by instance id."""
    if workers > 1 and len(tables) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            fitted = list(executor.map(fit_table, tables, [family] * len(tables),
                                       [cfg] * len(tables), [method] * len(tables)))
    else:
        fitted = [fit_table(table, family, cfg, method) for table in tables]
    result = {table.instance_id: params for table, params in zip(tables, fitted)}
    if fitted:
        mean_objective = float(np.mean([p.info.get("final_objective", np.nan) for p in fitted]))
        logger.info(f"Fitted {len(fitted)} {family} losses ({method}); mean objective {mean_objective:.4g}")
    return result
