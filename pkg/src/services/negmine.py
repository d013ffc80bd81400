"""
Hard-negative construction by input-space mixup.

For every class k present in a batch, the least confident in-class samples
are paired round-robin with the out-of-class samples the model scores
highest for k, and mixed with a Beta(rho, rho) weight. The mixes carry the
label of their negative source so they act as negatives for class-k anchors.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..models import AugmentedSample, MiningConfig
from .errors import InvalidParameterError, NumericalError
from .numkit import Rng, round_half_up, sample_beta

logger = logging.getLogger(__name__)


def rank_by_confidence(
    probs: np.ndarray,
    labels: np.ndarray,
    class_k: int,
    positive_fraction: float = 0.25,
    budget: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batch indices of the low-confidence positives and high-confidence
    negatives for `class_k`.

    The bottom `positive_fraction` of in-class samples by p_k are kept (at
    least one); enough top out-of-class samples are kept to cover `budget`
    round-robin mixes, capped by what the batch holds. Ties go to the lower
    batch index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not 0 < positive_fraction <= 1:
        raise InvalidParameterError("positive_fraction must lie in (0, 1]")
    in_class = np.flatnonzero(labels == class_k)
    out_class = np.flatnonzero(labels != class_k)
    if in_class.size == 0:
        raise InvalidParameterError("class not in batch")
    if out_class.size == 0:
        raise NumericalError("no negatives available")

    confidence = probs[:, class_k]
    n_low = max(1, int(np.floor(positive_fraction * in_class.size)))
    low = in_class[np.argsort(confidence[in_class], kind="stable")][:n_low]

    wanted = n_low if budget is None else max(1, int(np.ceil(budget / n_low)))
    n_high = min(out_class.size, wanted)
    order = np.lexsort((out_class, -confidence[out_class]))
    high = out_class[order][:n_high]
    return low, high


def augment_budget(class_counts: Sequence[int], budget_scale: float) -> np.ndarray:
    """n_hat_k = round(budget_scale * max_j n_j / n_k), half-up."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts <= 0):
        raise InvalidParameterError("empty class")
    if not budget_scale > 0:
        raise InvalidParameterError("budget_scale must be positive")
    return round_half_up(budget_scale * counts.max() / counts)


def mine_hard_negatives(
    inputs: np.ndarray,
    probs: np.ndarray,
    labels: np.ndarray,
    config: MiningConfig,
    rng: Rng,
    class_counts: Optional[Sequence[int]] = None,
) -> List[AugmentedSample]:
    """
    Augmented negatives for every class present in the batch.

    `class_counts` are the training-set totals indexed by class id that set
    the per-class budget; without them the batch counts are used. Each class
    draws its mixing weights from its own substream of `rng`.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    present = np.unique(labels)
    if present.size < 2:
        raise NumericalError("no negatives available")

    if class_counts is None:
        counts = np.array([np.sum(labels == k) for k in present])
    else:
        totals = np.asarray(class_counts)
        if present.max() >= totals.size:
            raise InvalidParameterError("class id outside class_counts")
        counts = totals[present]
    budgets = augment_budget(counts, config.budget_scale)
    if config.max_per_class is not None:
        budgets = np.minimum(budgets, config.max_per_class)

    mixes: List[AugmentedSample] = []
    for k, n_hat in zip(present.tolist(), budgets.tolist()):
        if n_hat < 1:
            continue
        low, high = rank_by_confidence(probs, labels, k, config.positive_fraction, budget=n_hat)
        stream = rng.substream(f"class-{k}")
        if config.fixed_lambda is not None:
            lams = np.full(n_hat, float(config.fixed_lambda))
        else:
            lams = np.asarray(sample_beta(stream, config.rho, size=n_hat))
        for m in range(n_hat):
            pos = int(low[m % low.size])
            neg = int(high[(m // low.size) % high.size])
            lam = float(lams[m])
            mixes.append(
                AugmentedSample(
                    x=(lam * inputs[pos] + (1.0 - lam) * inputs[neg]).tolist(),
                    anchor_class=k,
                    source_pos=pos,
                    source_neg=neg,
                    lam=lam,
                    assigned_label=int(labels[neg]),
                )
            )
    logger.debug("mined %d augmented negatives over %d classes", len(mixes), present.size)
    return mixes


def stack_augmented(samples: List[AugmentedSample], dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Inputs and assigned labels of a mined set as arrays."""
    if not samples:
        return np.zeros((0, dim), dtype=np.float64), np.zeros(0, dtype=np.int64)
    x = np.array([s.x for s in samples], dtype=np.float64)
    y = np.array([s.assigned_label for s in samples], dtype=np.int64)
    return x, y
