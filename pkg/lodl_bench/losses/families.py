"""
Loss Families
Parameter blocks, values and gradients of the five learned local losses.

Every family is a function of d = y_hat - y only and is exactly zero at d = 0.
The directed families use the plus block wherever d_i >= 0.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple, Union

import numpy as np

from lodl_bench.gradcore import DenseStack, Tape, ops

FAMILIES = ("weightedmse", "directedweightedmse", "quadratic", "directedquadratic", "nn")
CONVEX_FAMILIES = ("weightedmse", "directedweightedmse", "quadratic", "directedquadratic")
NN_HIDDEN = 100
NN_LAYERS = 4


def _residual(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: prediction has {y_hat.shape[-1]} entries, label has {y.shape[-1]}")
    return y_hat - y


@dataclass
class WeightedMSE:
    w: np.ndarray
    info: Dict = field(default_factory=dict)
    family = "weightedmse"

    def value(self, d: np.ndarray) -> np.ndarray:
        return (d * d) @ self.w

    def gradient(self, d: np.ndarray) -> np.ndarray:
        return 2.0 * self.w * d

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"w": self.w}


@dataclass
class DirectedWeightedMSE:
    w_plus: np.ndarray
    w_minus: np.ndarray
    info: Dict = field(default_factory=dict)
    family = "directedweightedmse"

    def _weights(self, d: np.ndarray) -> np.ndarray:
        return np.where(d >= 0, self.w_plus, self.w_minus)

    def value(self, d: np.ndarray) -> np.ndarray:
        return np.sum(self._weights(d) * d * d, axis=-1)

    def gradient(self, d: np.ndarray) -> np.ndarray:
        return 2.0 * self._weights(d) * d

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"w_plus": self.w_plus, "w_minus": self.w_minus}


@dataclass
class Quadratic:
    """d' (L L' + w_min I) d with L of shape (dim_y, k)."""
    L: np.ndarray
    w_min: float
    info: Dict = field(default_factory=dict)
    family = "quadratic"

    @property
    def rank(self) -> int:
        return self.L.shape[1]

    def hessian(self) -> np.ndarray:
        return self.L @ self.L.T + self.w_min * np.eye(self.L.shape[0])

    def value(self, d: np.ndarray) -> np.ndarray:
        projected = d @ self.L
        return np.sum(projected * projected, axis=-1) + self.w_min * np.sum(d * d, axis=-1)

    def gradient(self, d: np.ndarray) -> np.ndarray:
        return 2.0 * (d @ self.L) @ self.L.T + 2.0 * self.w_min * d

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"L": self.L}


@dataclass
class DirectedQuadratic:
    """||L_pp'p + L_mp'm||^2 + ||L_pm'p + L_mm'm||^2 + w_min ||d||^2 with p = max(d,0), m = max(-d,0).

    The factors are elementwise non-negative, which keeps the value convex in d.
    """
    L_pp: np.ndarray
    L_pm: np.ndarray
    L_mp: np.ndarray
    L_mm: np.ndarray
    w_min: float
    info: Dict = field(default_factory=dict)
    family = "directedquadratic"

    @property
    def rank(self) -> int:
        return self.L_pp.shape[1]

    def _parts(self, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        plus = np.where(d >= 0, d, 0.0)
        minus = np.where(d < 0, -d, 0.0)
        a = plus @ self.L_pp + minus @ self.L_mp
        b = plus @ self.L_pm + minus @ self.L_mm
        return plus, minus, a, b

    def value(self, d: np.ndarray) -> np.ndarray:
        _, _, a, b = self._parts(d)
        return np.sum(a * a, axis=-1) + np.sum(b * b, axis=-1) + self.w_min * np.sum(d * d, axis=-1)

    def gradient(self, d: np.ndarray) -> np.ndarray:
        _, _, a, b = self._parts(d)
        toward_plus = 2.0 * (a @ self.L_pp.T + b @ self.L_pm.T)
        toward_minus = 2.0 * (a @ self.L_mp.T + b @ self.L_mm.T)
        return np.where(d >= 0, toward_plus, -toward_minus) + 2.0 * self.w_min * d

    def stacked_factor(self) -> np.ndarray:
        """G = [[L_pp, L_pm], [L_mp, L_mm]] acting on the stacked vector [p; m]."""
        return np.block([[self.L_pp, self.L_pm], [self.L_mp, self.L_mm]])

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"L_pp": self.L_pp, "L_pm": self.L_pm, "L_mp": self.L_mp, "L_mm": self.L_mm}


@dataclass
class NNLoss:
    """scale_out * (NN(d / scale_in) - NN(0)) for a 4-layer fully-connected network."""
    network: DenseStack
    scale_in: float = 1.0
    scale_out: float = 1.0
    info: Dict = field(default_factory=dict)
    family = "nn"

    def _net(self, d: np.ndarray) -> np.ndarray:
        batch = np.atleast_2d(d) / self.scale_in
        return self.network.forward(batch).data[:, 0]

    def value(self, d: np.ndarray) -> np.ndarray:
        zero = self._net(np.zeros(d.shape[-1]))[0]
        out = self.scale_out * (self._net(d) - zero)
        return out if np.ndim(d) > 1 else out[0]

    def gradient(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        with Tape() as tape:
            leaf = tape.watch(np.atleast_2d(d))
            root = ops.sum(self.network.forward(ops.mul(leaf, 1.0 / self.scale_in)))
            grad = tape.backward(root)[leaf].data * self.scale_out
        return grad if d.ndim > 1 else grad[0]

    def arrays(self) -> Dict[str, np.ndarray]:
        return self.network.arrays()


LossParams = Union[WeightedMSE, DirectedWeightedMSE, Quadratic, DirectedQuadratic, NNLoss]


def eval_loss(params: LossParams, y_hat: np.ndarray, y: np.ndarray) -> float:
    """Value of a fitted loss at one prediction."""
    return float(params.value(_residual(np.reshape(y_hat, -1), np.reshape(y, -1))))


def eval_batch(params: LossParams, y_hats: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Values at a (K, dim_y) batch of predictions around one label."""
    return np.asarray(params.value(_residual(np.atleast_2d(y_hats), np.reshape(y, -1))), dtype=np.float64)


def grad_loss(params: LossParams, y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d loss / d y_hat at one prediction."""
    return np.asarray(params.gradient(_residual(np.reshape(y_hat, -1), np.reshape(y, -1))), dtype=np.float64)


def flatten(params: LossParams) -> Tuple[List[List[int]], np.ndarray]:
    """Shapes and concatenated values of every parameter array."""
    arrays = params.arrays()
    shapes = [list(a.shape) for a in arrays.values()]
    values = np.concatenate([a.reshape(-1) for a in arrays.values()]) if arrays else np.zeros(0)
    return shapes, values


def unflatten(family: str, shapes: List[List[int]], values: np.ndarray, extra: Dict) -> LossParams:
    """Rebuild parameters from ``flatten`` output plus the scalar fields in ``extra``."""
    arrays, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.asarray(values[offset:offset + size], dtype=np.float64).reshape(shape))
        offset += size
    info = extra.get("info", {})
    if family == "weightedmse":
        return WeightedMSE(w=arrays[0], info=info)
    if family == "directedweightedmse":
        return DirectedWeightedMSE(w_plus=arrays[0], w_minus=arrays[1], info=info)
    if family == "quadratic":
        return Quadratic(L=arrays[0], w_min=extra["w_min"], info=info)
    if family == "directedquadratic":
        return DirectedQuadratic(*arrays, w_min=extra["w_min"], info=info)
    if family == "nn":
        sizes = [shapes[0][0]] + [shape[1] for shape in shapes[0::2]]
        network = DenseStack(weights=arrays[0::2], biases=arrays[1::2])
        if network.sizes != sizes:
            raise ValueError(f"inconsistent network shapes {shapes}")
        return NNLoss(network=network, scale_in=extra["scale_in"], scale_out=extra["scale_out"], info=info)
    raise ValueError(f"Unknown loss family: {family}")


def scalar_fields(params: LossParams) -> Dict:
    if isinstance(params, (Quadratic, DirectedQuadratic)):
        return {"w_min": params.w_min}
    if isinstance(params, NNLoss):
        return {"scale_in": params.scale_in, "scale_out": params.scale_out}
    return {}


def grad_batch(params: LossParams, y_hats: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradients at a (K, dim_y) batch of predictions around one label."""
    return np.asarray(params.gradient(_residual(np.atleast_2d(y_hats), np.reshape(y, -1))), dtype=np.float64)
