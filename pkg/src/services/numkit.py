"""
Deterministic numeric kernel shared by every other service.

All arrays are float64. Randomness goes through `Rng`, a thin owner of a
numpy PCG64 generator whose seed can be fanned out into named substreams.
"""

import hashlib
import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidParameterError, NumericalError

logger = logging.getLogger(__name__)

# Floor added inside log arguments and denominators once positivity is checked.
EPS = 1e-12
DEFAULT_FD_STEP = 1e-5

ArrayLike = Union[np.ndarray, Sequence[float]]


def derive_seed(seed: int, component: str) -> int:
    """Substream seed: first 8 bytes of sha256("{seed}/{component}"), little endian."""
    digest = hashlib.sha256(f"{int(seed)}/{component}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """
    Single-owner seeded generator.

    Two instances built from the same seed produce identical streams; use
    `substream` to hand independent generators to other components.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise InvalidParameterError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def substream(self, component: str) -> "Rng":
        return Rng(derive_seed(self.seed, component))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low: int, high: Optional[int] = None, size=None):
        return self.generator.integers(low, high, size)

    def gamma(self, shape: float, size=None):
        return self.generator.gamma(shape, 1.0, size)

    def permutation(self, values):
        return self.generator.permutation(values)


def as_vec(values: ArrayLike) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size < 1:
        raise InvalidParameterError("expected a non-empty 1-D vector")
    return vec


def softmax(z: ArrayLike) -> np.ndarray:
    """Row-wise stable softmax; accepts a vector or a matrix of logits."""
    logits = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax: p * (g - <g, p>) per row."""
    inner = (grad_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def _checked_norm(vec: np.ndarray) -> float:
    norm = float(np.linalg.norm(vec))
    if norm <= 0.0 or not np.isfinite(norm):
        raise NumericalError("degenerate vector")
    return norm


def cosine_sim(a: ArrayLike, b: ArrayLike) -> float:
    va, vb = as_vec(a), as_vec(b)
    if va.shape != vb.shape:
        raise InvalidParameterError("vectors differ in length")
    value = float(va @ vb) / (_checked_norm(va) * _checked_norm(vb))
    return float(np.clip(value, -1.0, 1.0))


def cosine_sim_grad(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Gradient of s(a, b) with respect to its first argument."""
    va, vb = as_vec(a), as_vec(b)
    na, nb = _checked_norm(va), _checked_norm(vb)
    s = float(va @ vb) / (na * nb)
    return vb / (na * nb) - s * va / (na * na)


class CosineGeometry:
    """Pairwise cosine similarities of the rows of a matrix, kept for the backward pass."""

    def __init__(self, points: ArrayLike):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2:
            raise InvalidParameterError("expected a 2-D array of row vectors")
        self.norms = np.linalg.norm(self.points, axis=1)
        if np.any(self.norms <= 0.0) or not np.all(np.isfinite(self.norms)):
            raise NumericalError("degenerate vector")
        self.units = self.points / self.norms[:, None]
        self.sim = np.clip(self.units @ self.units.T, -1.0, 1.0)

    def backward(self, grad_sim: np.ndarray) -> np.ndarray:
        """
        Map dL/dS (n x n, diagonal ignored) onto dL/dpoints.

        S is symmetric, so row k collects both its anchor role (G[k, j]) and
        its partner role (G[j, k]).
        """
        g = np.array(grad_sim, dtype=np.float64)
        np.fill_diagonal(g, 0.0)
        h = g + g.T
        pull = h @ self.units
        push = (h * self.sim).sum(axis=1)[:, None] * self.units
        return (pull - push) / self.norms[:, None]


def sample_beta(rng: Rng, rho: float, size=None):
    """Symmetric Beta(rho, rho) via the ratio of two Gamma(rho) draws."""
    if not rho > 0:
        raise InvalidParameterError("invalid Beta parameter")
    g1 = np.asarray(rng.gamma(rho, size), dtype=np.float64)
    g2 = np.asarray(rng.gamma(rho, size), dtype=np.float64)
    total = g1 + g2
    # both Gamma draws underflowing is only reachable for rho far below 1e-3
    draws = np.where(total > 0.0, g1 / np.where(total > 0.0, total, 1.0), 0.5)
    if size is None:
        return float(draws)
    return draws


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: ArrayLike,
    h: float = DEFAULT_FD_STEP,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    With `indices`, only those flat coordinates are perturbed and a 1-D array of
    their partial derivatives is returned; otherwise the result has x's shape.
    """
    if not h > 0:
        raise InvalidParameterError("finite-difference step must be positive")
    point = np.array(x, dtype=np.float64)
    flat = point.reshape(-1)
    coords = range(flat.size) if indices is None else [int(i) for i in indices]
    out = np.zeros(len(coords), dtype=np.float64)
    for slot, j in enumerate(coords):
        original = flat[j]
        flat[j] = original + h
        upper = float(f(point))
        flat[j] = original - h
        lower = float(f(point))
        flat[j] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericalError(f"non-finite evaluation at coordinate {j}", coordinate=j)
        out[slot] = (upper - lower) / (2.0 * h)
    if indices is None:
        return out.reshape(point.shape)
    return out


def relative_error(analytic: ArrayLike, numeric: ArrayLike, floor: float = 1e-3) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / scale


def round_half_up(values: ArrayLike) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


def pairwise_masks(labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(positives, negatives, others) boolean masks; the diagonal is never set."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    others = ~np.eye(n, dtype=bool)
    same = labels[:, None] == labels[None, :]
    return same & others, ~same, others
