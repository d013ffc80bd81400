"""
Small multilayer perceptron with hand-written backpropagation, the Adam
optimizer and the JSON checkpoint format.
"""

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..models import Activation, CheckpointFile, ForwardCache
from .errors import InvalidParameterError, StaleCacheError
from .numkit import Rng, softmax, softmax_backward

logger = logging.getLogger(__name__)


class MlpModel:
    """
    Fully connected network ending in a softmax.

    `version` increases on every parameter update; a forward cache from an
    older version is rejected by `backward`.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        weights: List[np.ndarray],
        biases: List[np.ndarray],
        activation: Activation = Activation.TANH,
    ):
        self.layer_sizes = [int(n) for n in layer_sizes]
        if len(self.layer_sizes) < 2 or any(n < 1 for n in self.layer_sizes):
            raise InvalidParameterError("layer sizes must list at least input and output widths")
        if self.layer_sizes[-1] < 2:
            raise InvalidParameterError("the output layer needs at least 2 classes")
        self.activation = Activation(activation)
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise InvalidParameterError(f"layer {i} parameters do not match sizes {expected}")
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise InvalidParameterError("one weight matrix per layer is required")
        self.version = 0

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], rng: Rng, activation: Activation = Activation.TANH) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(layer_sizes, weights, biases, activation)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int], activation: Activation = Activation.TANH) -> "MlpModel":
        weights = [np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(b) for b in layer_sizes[1:]]
        return cls(layer_sizes, weights, biases, activation)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> List[np.ndarray]:
        """Live parameter arrays, ordered W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters:
            raise InvalidParameterError("flat parameter vector has the wrong length")
        offset = 0
        for param in self.parameters():
            param[...] = flat[offset:offset + param.size].reshape(param.shape)
            offset += param.size
        self.version += 1

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes, self.weights, self.biases, self.activation)

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation == Activation.RELU:
            return np.maximum(z, 0.0)
        return np.tanh(z)

    def _activate_backward(self, pre: np.ndarray, post: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.activation == Activation.RELU:
            return grad * (pre > 0.0)
        return grad * (1.0 - post * post)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, ForwardCache]:
        inputs = np.asarray(x, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        if inputs.ndim != 2 or inputs.shape[1] != self.input_dim:
            raise InvalidParameterError(f"input dimension must be {self.input_dim}")
        pre, post = [], []
        hidden = inputs
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = hidden @ w + b
            hidden = self._activate(z)
            pre.append(z)
            post.append(hidden)
        logits = hidden @ self.weights[-1] + self.biases[-1]
        probs = softmax(logits)
        cache = ForwardCache(version=self.version, inputs=inputs, pre=pre, post=post, logits=logits, probs=probs)
        return logits, probs, cache

    def features(self, x: np.ndarray) -> np.ndarray:
        """Penultimate activations (the inputs themselves for a network without hidden layers)."""
        _, _, cache = self.forward(x)
        return cache.post[-1] if cache.post else cache.inputs

    def backward(
        self,
        cache: ForwardCache,
        grad_probs: Optional[np.ndarray] = None,
        grad_logits: Optional[np.ndarray] = None,
    ) -> List[np.ndarray]:
        """Parameter gradients, ordered like `parameters()`."""
        if cache.version != self.version:
            raise StaleCacheError("stale cache")
        g = np.zeros_like(cache.logits)
        if grad_probs is not None:
            g = g + softmax_backward(cache.probs, np.asarray(grad_probs, dtype=np.float64))
        if grad_logits is not None:
            g = g + np.asarray(grad_logits, dtype=np.float64)

        layer_inputs = [cache.inputs] + cache.post
        grads: List[np.ndarray] = []
        for layer in range(len(self.weights) - 1, -1, -1):
            a = layer_inputs[layer]
            grads.append(g.sum(axis=0))
            grads.append(a.T @ g)
            if layer > 0:
                g = self._activate_backward(cache.pre[layer - 1], cache.post[layer - 1], g @ self.weights[layer].T)
        grads.reverse()
        return grads

    def to_checkpoint(self) -> CheckpointFile:
        return CheckpointFile(
            layer_sizes=self.layer_sizes,
            activation=self.activation,
            weights=[w.tolist() for w in self.weights],
            biases=[b.tolist() for b in self.biases],
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: CheckpointFile) -> "MlpModel":
        return cls(
            checkpoint.layer_sizes,
            [np.asarray(w, dtype=np.float64) for w in checkpoint.weights],
            [np.asarray(b, dtype=np.float64) for b in checkpoint.biases],
            checkpoint.activation,
        )


class Adam:
    """Adam over a model's parameter list, updating in place."""

    def __init__(self, model: MlpModel, learning_rate: float = 5e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not learning_rate > 0:
            raise InvalidParameterError("learning_rate must be positive")
        self.model = model
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in model.parameters()]
        self.v = [np.zeros_like(p) for p in model.parameters()]

    def step(self, grads: List[np.ndarray]) -> None:
        params = self.model.parameters()
        if len(grads) != len(params):
            raise InvalidParameterError("one gradient per parameter array is required")
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for param, grad, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        self.model.version += 1


def save_checkpoint(model: MlpModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.to_checkpoint().model_dump_json(indent=1) + "\n", encoding="utf-8")
    logger.info("wrote checkpoint to %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> MlpModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    checkpoint = CheckpointFile.model_validate(json.loads(path.read_text(encoding="utf-8")))
    if checkpoint.format_version != 1:
        raise InvalidParameterError(f"unsupported checkpoint version {checkpoint.format_version}")
    return MlpModel.from_checkpoint(checkpoint)
