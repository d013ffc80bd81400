"""
Randomised analytic-versus-central-difference audits of every objective.

Loss-level targets perturb the prediction vectors (or prototypes) directly;
the `total` target perturbs a sample of network parameters with the mined
mixes held fixed.
"""

import logging
from typing import Callable, Dict, List, Sequence

import numpy as np

from ..models import ContrastiveBatch, Dataset, GradCheckResult, LossVariant, PrototypeSet, TrainConfig
from .errors import InvalidParameterError
from .losses import CONTRASTIVE_LOSSES, prototype_alignment_loss, reweighted_ce_loss
from .mlp import MlpModel
from .numkit import Rng, derive_seed, finite_diff_grad, relative_error, softmax
from .trainer import compute_objective, mine_for_batch

logger = logging.getLogger(__name__)

LOSS_TOLERANCE = 1e-5
NETWORK_TOLERANCE = 1e-4
NETWORK_COORDINATES = 40
# mixes can land within 1e-3 of their positive in prediction space
NETWORK_FD_STEP = 1e-6
GRAD_CHECK_TARGETS = ["infonce-nd", "supcon-nd", "infonce", "supcon", "reweighted-ce", "prototype", "total"]

_NUM_CLASSES = 4
_BATCH_ROWS = 8


def _random_preds(rng: Rng, rows: int, classes: int) -> np.ndarray:
    return softmax(rng.normal(scale=1.5, size=(rows, classes)))


def _balanced_labels(rng: Rng, rows: int, classes: int) -> np.ndarray:
    # each class at least twice, so every anchor has positives and negatives
    return rng.permutation(np.arange(rows) % classes)


def _audit_contrastive(variant: LossVariant, rng: Rng) -> float:
    batch = ContrastiveBatch(
        preds=_random_preds(rng, _BATCH_ROWS, _NUM_CLASSES),
        labels=_balanced_labels(rng, _BATCH_ROWS, _NUM_CLASSES),
    )
    loss_fn = CONTRASTIVE_LOSSES[variant]
    analytic = loss_fn(batch, with_grad=True).grads
    numeric = finite_diff_grad(lambda p: loss_fn(batch.with_preds(p)).value, batch.preds)
    return relative_error(analytic, numeric)


def _audit_reweighted_ce(rng: Rng) -> float:
    preds = _random_preds(rng, _BATCH_ROWS, _NUM_CLASSES)
    labels = _balanced_labels(rng, _BATCH_ROWS, _NUM_CLASSES)
    analytic = reweighted_ce_loss(preds, labels, with_grad=True).grads
    numeric = finite_diff_grad(lambda p: reweighted_ce_loss(p, labels).value, preds)
    return relative_error(analytic, numeric)


def _audit_prototype(rng: Rng) -> float:
    classes, domains = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    protos = PrototypeSet(
        classes=classes.reshape(-1),
        domains=domains.reshape(-1),
        protos=_random_preds(rng, 9, _NUM_CLASSES),
    )
    analytic = prototype_alignment_loss(protos, with_grad=True).grads
    numeric = finite_diff_grad(lambda p: prototype_alignment_loss(protos.with_protos(p)).value, protos.protos)
    return relative_error(analytic, numeric)


def _audit_total(rng: Rng) -> float:
    num_classes, per_domain = 3, 6
    model = MlpModel.initialize([2, 8, 8, num_classes], rng.substream("init"))
    labels = np.tile(np.arange(per_domain) % num_classes, 2)
    domains = np.repeat([0, 1], per_domain)
    x = rng.normal(size=(labels.size, 2)) + 1.5 * np.stack([np.cos(labels), np.sin(labels)], axis=1)
    batch = Dataset(x=x, y=labels, d=domains)
    config = TrainConfig(alpha=0.5, beta=0.5, seed=0)

    _, probs, _ = model.forward(batch.x)
    x_aug, y_aug = mine_for_batch(model, batch, probs, config, rng.substream("mine"))
    analytic = np.concatenate([g.reshape(-1) for g in compute_objective(model, batch, config, x_aug, y_aug).grads])

    coordinates = rng.permutation(model.num_parameters)[:NETWORK_COORDINATES]
    start = model.get_flat()

    def objective(flat: np.ndarray) -> float:
        model.set_flat(flat)
        return compute_objective(model, batch, config, x_aug, y_aug).total

    numeric = finite_diff_grad(objective, start, h=NETWORK_FD_STEP, indices=coordinates)
    model.set_flat(start)
    return relative_error(analytic[coordinates], numeric)


def _auditor(target: str) -> Callable[[Rng], float]:
    if target in {v.value for v in CONTRASTIVE_LOSSES}:
        variant = LossVariant(target)
        return lambda rng: _audit_contrastive(variant, rng)
    auditors: Dict[str, Callable[[Rng], float]] = {
        "reweighted-ce": _audit_reweighted_ce,
        "prototype": _audit_prototype,
        "total": _audit_total,
    }
    if target not in auditors:
        raise InvalidParameterError(f"unknown grad-check target '{target}'")
    return auditors[target]


def run_grad_check(target: str, trials: int, seed: int = 0) -> GradCheckResult:
    """Audit one target over `trials` seeded trials; trial t uses seed derive_seed(seed, f"{target}/{t}")."""
    if trials < 1:
        raise InvalidParameterError("trials must be at least 1")
    audit = _auditor(target)
    tolerance = NETWORK_TOLERANCE if target == "total" else LOSS_TOLERANCE
    worst, failing = 0.0, []
    for trial in range(trials):
        trial_seed = derive_seed(seed, f"{target}/{trial}")
        err = audit(Rng(trial_seed))
        worst = max(worst, err)
        if not err < tolerance:
            logger.warning("%s trial %d (seed %d) failed: relative error %.3e", target, trial, trial_seed, err)
            failing.append(trial_seed)
    return GradCheckResult(target=target, trials=trials, max_rel_err=worst, tolerance=tolerance, failing_seeds=failing)


def run_grad_checks(targets: Sequence[str], trials: int, seed: int = 0) -> List[GradCheckResult]:
    return [run_grad_check(target, trials, seed) for target in targets]
