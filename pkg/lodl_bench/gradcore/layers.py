"""
Layers
Fully-connected parameter blocks shared by the MLP model and the NN loss family.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from lodl_bench.gradcore import ops
from lodl_bench.gradcore.tape import ArrayLike, Tape, Tensor


def init_uniform(rng: np.random.Generator, fan_in: int, shape: Sequence[int]) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


@dataclass
class DenseStack:
    """A chain of dense layers with relu between them and an optional tanh on the output."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    tanh_output: bool = False

    @classmethod
    def create(cls, sizes: Sequence[int], rng: np.random.Generator,
               tanh_output: bool = False) -> "DenseStack":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(init_uniform(rng, fan_in, (fan_in, fan_out)))
            biases.append(init_uniform(rng, fan_in, (fan_out,)))
        return cls(weights=weights, biases=biases, tanh_output=tanh_output)

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> Dict[str, np.ndarray]:
        named = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"w{i}"] = w
            named[f"b{i}"] = b
        return named

    def watch(self, tape: Tape) -> Dict[str, Tensor]:
        return {name: tape.watch(value) for name, value in self.arrays().items()}

    def forward(self, x: ArrayLike, params: Optional[Dict[str, ArrayLike]] = None) -> Tensor:
        """Apply the stack to a (B, in) batch."""
        params = params or self.arrays()
        h = x
        depth = len(self.weights)
        for i in range(depth):
            h = ops.add(ops.matmul(h, params[f"w{i}"]), params[f"b{i}"])
            if i < depth - 1:
                h = ops.relu(h)
        if self.tanh_output:
            h = ops.tanh(h)
        return h

    def apply_update(self, grads: Dict[str, np.ndarray], lr: float) -> "DenseStack":
        """Return a new stack after one gradient-descent step."""
        weights = [w - lr * grads[f"w{i}"] for i, w in enumerate(self.weights)]
        biases = [b - lr * grads[f"b{i}"] for i, b in enumerate(self.biases)]
        return DenseStack(weights=weights, biases=biases, tanh_output=self.tanh_output)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays().values()])

    @classmethod
    def from_flat(cls, sizes: Sequence[int], values: np.ndarray, tanh_output: bool = False) -> "DenseStack":
        weights, biases, offset = [], [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(np.asarray(values[offset:offset + fan_in * fan_out]).reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            biases.append(np.asarray(values[offset:offset + fan_out]))
            offset += fan_out
        if offset != len(values):
            raise ValueError(f"expected {offset} parameters for sizes {list(sizes)}, got {len(values)}")
        return cls(weights=weights, biases=biases, tanh_output=tanh_output)
