"""
Training loop for the weighted objective

    L_total = L_ce + alpha * L_con + beta * L_const

on an MlpModel, with domain-balanced batches, per-batch prototypes and
hard-negative mixes built from the current predictions.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..models import (
    ClassGroup,
    ContrastiveBatch,
    Dataset,
    DiagnosticsConfig,
    ForwardCache,
    LossLogRow,
    LossValue,
    MetricsReport,
    ObjectiveValue,
    TrainConfig,
    TrainResult,
)
from . import diagnostics
from .errors import NdclError, NumericalError, PlanError, TrainingError
from .losses import (
    build_prototypes,
    contrastive_loss,
    cross_entropy_loss,
    prototype_alignment_loss,
    reweighted_ce_loss,
    total_loss,
)
from .mlp import Adam, MlpModel
from .negmine import mine_hard_negatives, stack_augmented
from .numkit import Rng

logger = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ["iteration", "ce", "con", "const", "total"]
LOG_EVERY = 100


def sample_batch(dataset: Dataset, domains: Sequence[int], batch_size: int, rng: Rng) -> np.ndarray:
    """
    Indices of `batch_size` samples from every listed domain, drawn with
    replacement only when a domain holds fewer samples than that.
    """
    picks = []
    for d in domains:
        members = np.flatnonzero(dataset.d == d)
        if members.size == 0:
            raise PlanError("empty domain")
        replace = members.size < batch_size
        picks.append(rng.generator.choice(members, size=batch_size, replace=replace))
    return np.concatenate(picks)


def _contrastive_term(
    model: MlpModel,
    probs: np.ndarray,
    labels: np.ndarray,
    x_aug: np.ndarray,
    y_aug: np.ndarray,
    config: TrainConfig,
) -> Tuple[LossValue, Optional[np.ndarray], Optional[ForwardCache]]:
    """
    Contrastive loss over batch and mixes (or the mixes alone), split into
    the gradient on batch predictions and the gradient on mix predictions.
    """
    n = probs.shape[0]
    aug_cache = None
    aug_probs = np.zeros((0, probs.shape[1]))
    if x_aug.shape[0] > 0:
        _, aug_probs, aug_cache = model.forward(x_aug)

    if config.con_on_augmented_only:
        preds, pred_labels = aug_probs, y_aug
    else:
        preds, pred_labels = np.vstack([probs, aug_probs]), np.concatenate([labels, y_aug])
    if preds.shape[0] < 2 or np.unique(pred_labels).size < 2:
        logger.debug("contrastive term skipped: fewer than two classes among %d predictions", preds.shape[0])
        return LossValue.zero(probs.shape), None, None

    value = contrastive_loss(config.variant, ContrastiveBatch(preds=preds, labels=pred_labels), with_grad=True, strict=False)
    if config.con_on_augmented_only:
        batch_grads, aug_grads = np.zeros_like(probs), value.grads
    else:
        batch_grads, aug_grads = value.grads[:n], value.grads[n:]
    return LossValue(value=value.value, grads=batch_grads), aug_grads, aug_cache


def compute_objective(
    model: MlpModel,
    batch: Dataset,
    config: TrainConfig,
    x_aug: Optional[np.ndarray] = None,
    y_aug: Optional[np.ndarray] = None,
    forward: Optional[Tuple[np.ndarray, np.ndarray, ForwardCache]] = None,
) -> ObjectiveValue:
    """
    Objective value and parameter gradient on one batch.

    The mixes are treated as constant inputs. `forward` reuses a forward
    pass of `batch.x` already made by the caller.
    """
    _, probs, cache = forward if forward is not None else model.forward(batch.x)
    if config.ce_reweighting:
        ce = reweighted_ce_loss(probs, batch.y, with_grad=True, stop_gradient=config.ce_weight_stop_gradient)
    else:
        ce = cross_entropy_loss(probs, batch.y, with_grad=True)

    const = LossValue.zero(probs.shape)
    if config.uses_alignment:
        protos = build_prototypes(probs, batch.y, batch.d)
        aligned = prototype_alignment_loss(protos, with_grad=True, denominator=config.prototype_denominator)
        const = LossValue(value=aligned.value, grads=protos.scatter(aligned.grads))

    con = LossValue.zero(probs.shape)
    aug_grads, aug_cache, num_aug = None, None, 0
    if config.uses_contrastive:
        if x_aug is None:
            x_aug = np.zeros((0, batch.x.shape[1]))
            y_aug = np.zeros(0, dtype=np.int64)
        num_aug = int(x_aug.shape[0])
        con, aug_grads, aug_cache = _contrastive_term(model, probs, batch.y, x_aug, y_aug, config)

    total = total_loss(ce, con, const, config.alpha, config.beta)
    grads = model.backward(cache, grad_probs=total.grads)
    if aug_cache is not None and config.alpha:
        for slot, extra in enumerate(model.backward(aug_cache, grad_probs=config.alpha * aug_grads)):
            grads[slot] = grads[slot] + extra
    return ObjectiveValue(
        ce=ce.value,
        con=con.value,
        const=const.value,
        total=total.value,
        grads=grads,
        num_augmented=num_aug,
    )


def mine_for_batch(
    model: MlpModel,
    batch: Dataset,
    probs: np.ndarray,
    config: TrainConfig,
    rng: Rng,
    class_counts: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    if not (config.uses_contrastive and config.augment):
        return np.zeros((0, batch.x.shape[1])), np.zeros(0, dtype=np.int64)
    mixes = mine_hard_negatives(batch.x, probs, batch.y, config.mining, rng, class_counts)
    return stack_augmented(mixes, batch.x.shape[1])


def _batch_dump(batch: Dataset, x_aug: np.ndarray, y_aug: np.ndarray) -> dict:
    return {
        "x": batch.x.tolist(),
        "y": batch.y.tolist(),
        "d": batch.d.tolist(),
        "x_aug": x_aug.tolist(),
        "y_aug": y_aug.tolist(),
    }


def train(
    model: MlpModel,
    config: TrainConfig,
    dataset: Dataset,
    source_domains: Optional[Sequence[int]] = None,
) -> TrainResult:
    """
    Run `config.iterations` steps of sample, forward, mine, objective,
    backward and Adam update. Mining budgets follow the class totals of
    the training set.
    """
    domains = sorted(np.unique(dataset.d).tolist()) if source_domains is None else list(source_domains)
    rng = Rng(config.seed)
    batch_rng = rng.substream("batch")
    class_counts = dataset.class_counts(model.num_classes)
    optimizer = Adam(model, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    log: List[LossLogRow] = []

    logger.info(
        "training %s for %d iterations on %d domains (alpha=%g, beta=%g)",
        config.variant.value, config.iterations, len(domains), config.alpha, config.beta,
    )
    for iteration in range(1, config.iterations + 1):
        batch = dataset.subset(sample_batch(dataset, domains, config.batch_size, batch_rng))
        x_aug = np.zeros((0, batch.x.shape[1]))
        y_aug = np.zeros(0, dtype=np.int64)
        try:
            forward = model.forward(batch.x)
            x_aug, y_aug = mine_for_batch(
                model, batch, forward[1], config, rng.substream(f"mine-{config.mining.seed}-{iteration}"), class_counts
            )
            objective = compute_objective(model, batch, config, x_aug, y_aug, forward=forward)
            if not all(np.all(np.isfinite(g)) for g in objective.grads):
                raise NumericalError("non-finite gradient")
        except NdclError as e:
            logger.error("training aborted at iteration %d: %s", iteration, e)
            raise TrainingError(str(e), iteration, dump=_batch_dump(batch, x_aug, y_aug)) from e
        except ValueError as e:
            raise TrainingError(f"non-finite loss ({e})", iteration, dump=_batch_dump(batch, x_aug, y_aug)) from e

        optimizer.step(objective.grads)
        log.append(
            LossLogRow(
                iteration=iteration,
                ce=objective.ce,
                con=objective.con,
                const=objective.const,
                total=objective.total,
            )
        )
        logger.debug("iteration %d: total=%.6f augmented=%d", iteration, objective.total, objective.num_augmented)
        if iteration % LOG_EVERY == 0:
            logger.info("iteration %d: ce=%.4f con=%.4f const=%.4f", iteration, objective.ce, objective.con, objective.const)
    return TrainResult(model=model, log=log)


def predict(
    model: MlpModel,
    x: np.ndarray,
    chunk_size: int = 256,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Probabilities and penultimate features in fixed-size chunks; the chunks
    may run on an executor and are reassembled in order.
    """
    x = np.asarray(x, dtype=np.float64)
    starts = range(0, x.shape[0], chunk_size)

    def run(start: int) -> Tuple[np.ndarray, np.ndarray]:
        _, probs, cache = model.forward(x[start:start + chunk_size])
        return probs, cache.post[-1] if cache.post else cache.inputs

    parts = list(executor.map(run, starts)) if executor is not None else [run(s) for s in starts]
    if not parts:
        return np.zeros((0, model.num_classes)), np.zeros((0, model.layer_sizes[-2]))
    return np.concatenate([p for p, _ in parts]), np.concatenate([f for _, f in parts])


def evaluate(
    model: MlpModel,
    dataset: Dataset,
    source_domains: Sequence[int],
    target_domains: Sequence[int],
    groups: Sequence[ClassGroup],
    config: DiagnosticsConfig,
    seed: int = 0,
    executor: Optional[ThreadPoolExecutor] = None,
) -> MetricsReport:
    """
    Metrics on the target domains of a held-out draw: margins, accuracy by
    group, posterior discrepancy against the sources and the prior
    discrepancy of penultimate features.
    """
    probs, features = predict(model, dataset.x, config.chunk_size, executor)
    is_source = np.isin(dataset.d, list(source_domains))
    is_target = np.isin(dataset.d, list(target_domains))
    if not np.any(is_target):
        raise PlanError("no target samples")

    posterior = diagnostics.posterior_discrepancy(
        probs[is_source],
        dataset.y[is_source],
        probs[is_target],
        dataset.y[is_target],
        source_domains=dataset.d[is_source],
        pooled=config.pooled_posterior,
    )
    prior = diagnostics.prior_discrepancy(
        features,
        dataset.d,
        source_domains,
        target_domains,
        config.num_projections,
        Rng(seed).substream("projections"),
    )
    return diagnostics.build_report(probs[is_target], dataset.y[is_target], groups, config, posterior, prior)


def write_loss_log(rows: List[LossLogRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [[row.iteration] + [repr(float(getattr(row, c))) for c in LOSS_LOG_COLUMNS[1:]] for row in rows],
        columns=LOSS_LOG_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info("wrote loss log to %s", path)
    return path


def read_loss_log(path: Union[str, Path]) -> List[LossLogRow]:
    frame = pd.read_csv(Path(path), dtype={"iteration": int}, float_precision="round_trip")
    return [LossLogRow(**record) for record in frame[LOSS_LOG_COLUMNS].to_dict(orient="records")]
