"""
Objectives over prediction vectors.

Contrastive losses (negative-dominant InfoNCE and SupCon, and their classical
positive-dominant counterparts), the prototype alignment loss, the class-wise
re-weighted cross-entropy and the weighted total. Every loss can return the
analytic gradient with respect to the prediction vectors it was given.

Similarity is cosine. Each contrastive loss reduces to a per-anchor value and
a matrix dL/dS over pairwise similarities, which `CosineGeometry.backward`
maps onto the prediction rows; that covers every sample both as anchor and as
someone else's positive or negative.
"""

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ..models import ContrastiveBatch, LossValue, LossVariant, PrototypeDenominator, PrototypeSet
from .errors import InvalidParameterError, NumericalError
from .numkit import EPS, CosineGeometry, cosine_sim_grad, pairwise_masks, softmax

logger = logging.getLogger(__name__)

# sums at or below this are treated as exact zeros
DEGENERACY_TOL = 1e-12


def _active_anchors(partner_counts: np.ndarray, strict: bool, message: str) -> np.ndarray:
    missing = partner_counts == 0
    if strict and np.any(missing):
        raise NumericalError(message)
    return ~missing


def _require_positive(values: np.ndarray, active: np.ndarray, message: str) -> None:
    if np.any(values[active] <= DEGENERACY_TOL):
        raise NumericalError(message)


def _safe(values: np.ndarray, active: np.ndarray) -> np.ndarray:
    """values + EPS on active rows, 1 elsewhere, so masked divisions stay finite."""
    return np.where(active, values + EPS, 1.0)


def _finish(per_anchor: np.ndarray, grad_sim: np.ndarray, geometry: CosineGeometry, with_grad: bool) -> LossValue:
    value = float(per_anchor.sum())
    if not np.isfinite(value):
        raise NumericalError("non-finite loss")
    grads = geometry.backward(grad_sim) if with_grad else None
    return LossValue(value=value, grads=grads, per_anchor=per_anchor)


def infonce_nd_loss(batch: ContrastiveBatch, with_grad: bool = False, strict: bool = True) -> LossValue:
    """
    Negative-dominant InfoNCE:
        sum_i -log[ mean_n (1 - s_in) / sum_a (1 - s_ia) ]

    With strict=False anchors without negatives, or whose negatives all
    coincide with them, are skipped instead of raising.
    """
    geometry = CosineGeometry(batch.preds)
    _, neg, others = pairwise_masks(batch.labels)
    dis = 1.0 - geometry.sim
    n_neg = neg.sum(axis=1)
    active = _active_anchors(n_neg, strict, "anchor without negatives")

    z = (dis * others).sum(axis=1)
    neg_sum = (dis * neg).sum(axis=1)
    if not strict:
        active &= neg_sum > DEGENERACY_TOL
    _require_positive(z, active, "degenerate anchor neighborhood")
    _require_positive(neg_sum, active, "negatives coincide with anchor")

    z_safe, neg_safe = _safe(z, active), _safe(neg_sum, active)
    per_anchor = np.where(
        active,
        -np.log(neg_safe) + np.log(np.maximum(n_neg, 1)) + np.log(z_safe),
        0.0,
    )
    grad_dis = others / z_safe[:, None] - neg / neg_safe[:, None]
    grad_dis[~active] = 0.0
    return _finish(per_anchor, -grad_dis, geometry, with_grad)


def supcon_nd_loss(batch: ContrastiveBatch, with_grad: bool = False, strict: bool = True) -> LossValue:
    """
    Negative-dominant SupCon (log inside the negative average):
        sum_i -(1/|N(i)|) sum_n log[ (1 - s_in) / sum_a (1 - s_ia) ]

    With strict=False negative pairs at zero dissimilarity are dropped from
    N(i) instead of raising; anchors left without negatives are skipped.
    """
    geometry = CosineGeometry(batch.preds)
    _, neg, others = pairwise_masks(batch.labels)
    dis = 1.0 - geometry.sim
    n_neg = neg.sum(axis=1)
    active = _active_anchors(n_neg, strict, "anchor without negatives")

    degenerate = neg & (dis <= DEGENERACY_TOL)
    if np.any(degenerate[active]):
        if strict:
            raise NumericalError("log of zero")
        neg = neg & ~degenerate
        n_neg = neg.sum(axis=1)
        active &= n_neg > 0

    z = (dis * others).sum(axis=1)
    _require_positive(z, active, "degenerate anchor neighborhood")

    z_safe = _safe(z, active)
    pair = np.where(neg, dis + EPS, 1.0)
    count = np.maximum(n_neg, 1)[:, None]
    per_anchor = np.where(
        active,
        -(np.log(pair) * neg).sum(axis=1) / count[:, 0] + np.log(z_safe),
        0.0,
    )
    grad_dis = others / z_safe[:, None] - neg / (count * pair)
    grad_dis[~active] = 0.0
    return _finish(per_anchor, -grad_dis, geometry, with_grad)


def infonce_classic_loss(batch: ContrastiveBatch, with_grad: bool = False, strict: bool = True) -> LossValue:
    """
    Positive-dominant InfoNCE:
        sum_i -log[ mean_p s_ip / sum_a s_ia ]
    """
    geometry = CosineGeometry(batch.preds)
    pos, _, others = pairwise_masks(batch.labels)
    sim = geometry.sim
    n_pos = pos.sum(axis=1)
    active = _active_anchors(n_pos, strict, "anchor without positives")

    z = (sim * others).sum(axis=1)
    pos_sum = (sim * pos).sum(axis=1)
    _require_positive(z, active, "zero denominator")
    _require_positive(pos_sum, active, "log of zero")

    z_safe, pos_safe = _safe(z, active), _safe(pos_sum, active)
    per_anchor = np.where(
        active,
        -np.log(pos_safe) + np.log(np.maximum(n_pos, 1)) + np.log(z_safe),
        0.0,
    )
    grad_sim = others / z_safe[:, None] - pos / pos_safe[:, None]
    grad_sim[~active] = 0.0
    return _finish(per_anchor, grad_sim, geometry, with_grad)


def supcon_classic_loss(batch: ContrastiveBatch, with_grad: bool = False, strict: bool = True) -> LossValue:
    """
    Positive-dominant SupCon in prediction space:
        sum_i -(1/|P(i)|) sum_p log[ s_ip / sum_a s_ia ]
    """
    geometry = CosineGeometry(batch.preds)
    pos, _, others = pairwise_masks(batch.labels)
    sim = geometry.sim
    n_pos = pos.sum(axis=1)
    active = _active_anchors(n_pos, strict, "anchor without positives")

    z = (sim * others).sum(axis=1)
    _require_positive(z, active, "zero denominator")
    if np.any(pos[active] & (sim[active] <= DEGENERACY_TOL)):
        raise NumericalError("log of zero")

    z_safe = _safe(z, active)
    pair = np.where(pos, sim + EPS, 1.0)
    count = np.maximum(n_pos, 1)[:, None]
    per_anchor = np.where(
        active,
        -(np.log(pair) * pos).sum(axis=1) / count[:, 0] + np.log(z_safe),
        0.0,
    )
    grad_sim = others / z_safe[:, None] - pos / (count * pair)
    grad_sim[~active] = 0.0
    return _finish(per_anchor, grad_sim, geometry, with_grad)


ContrastiveLoss = Callable[..., LossValue]

CONTRASTIVE_LOSSES: Dict[LossVariant, ContrastiveLoss] = {
    LossVariant.INFONCE_ND: infonce_nd_loss,
    LossVariant.SUPCON_ND: supcon_nd_loss,
    LossVariant.INFONCE: infonce_classic_loss,
    LossVariant.SUPCON: supcon_classic_loss,
}


def contrastive_loss(
    variant: LossVariant, batch: ContrastiveBatch, with_grad: bool = False, strict: bool = True
) -> LossValue:
    try:
        loss_fn = CONTRASTIVE_LOSSES[LossVariant(variant)]
    except KeyError:
        raise InvalidParameterError(f"no contrastive loss for variant '{variant}'")
    return loss_fn(batch, with_grad=with_grad, strict=strict)


def _anchor_partners(batch: ContrastiveBatch, anchor: int) -> Tuple[np.ndarray, np.ndarray]:
    if not 0 <= anchor < batch.size:
        raise InvalidParameterError("anchor index out of range")
    same = batch.labels == batch.labels[anchor]
    idx = np.arange(batch.size)
    return idx[same & (idx != anchor)], idx[~same]


def amplification_factor(batch: ContrastiveBatch, anchor: int) -> float:
    """sum_p (1 - s_ip) / sum_n (1 - s_in) for one anchor."""
    positives, negatives = _anchor_partners(batch, anchor)
    if positives.size == 0 or negatives.size == 0:
        raise NumericalError("amplification factor needs a positive and a negative")
    geometry = CosineGeometry(batch.preds)
    dis = 1.0 - geometry.sim[anchor]
    neg_sum = float(dis[negatives].sum())
    if neg_sum <= DEGENERACY_TOL:
        raise NumericalError("negatives coincide with anchor")
    return float(dis[positives].sum()) / neg_sum


def gradient_scales(batch: ContrastiveBatch, anchor: int, variant: LossVariant) -> Tuple[float, float]:
    """
    Multipliers of the per-anchor gradient terms, as (positive, negative):

        dL_i/dp_i = -positive * sum_p grad s_ip + negative * sum_n grad s_in

    For infonce-nd the negative multiplier carries the amplification factor
    over Z'; for classical infonce it is the plain 1/Z and the factor moves to
    the positive side.
    """
    positives, negatives = _anchor_partners(batch, anchor)
    if positives.size == 0 or negatives.size == 0:
        raise NumericalError("gradient scales need a positive and a negative")
    sim = CosineGeometry(batch.preds).sim[anchor]
    variant = LossVariant(variant)
    if variant == LossVariant.INFONCE_ND:
        pos_sum = float((1.0 - sim[positives]).sum())
        neg_sum = float((1.0 - sim[negatives]).sum())
        if neg_sum <= DEGENERACY_TOL:
            raise NumericalError("negatives coincide with anchor")
        z = pos_sum + neg_sum
        return 1.0 / z, pos_sum / (neg_sum * z)
    if variant == LossVariant.INFONCE:
        pos_sum = float(sim[positives].sum())
        neg_sum = float(sim[negatives].sum())
        if pos_sum <= DEGENERACY_TOL:
            raise NumericalError("log of zero")
        z = pos_sum + neg_sum
        return neg_sum / (pos_sum * z), 1.0 / z
    raise InvalidParameterError("gradient scales are defined for infonce-nd and infonce")


def anchor_gradient(batch: ContrastiveBatch, anchor: int, variant: LossVariant) -> np.ndarray:
    """
    Closed-form gradient of one anchor's term with respect to its own
    prediction, every other row held fixed.
    """
    variant = LossVariant(variant)
    positives, negatives = _anchor_partners(batch, anchor)
    p_i = batch.preds[anchor]
    grad_pos = [cosine_sim_grad(p_i, batch.preds[j]) for j in positives]
    grad_neg = [cosine_sim_grad(p_i, batch.preds[j]) for j in negatives]
    sum_pos = np.sum(grad_pos, axis=0) if grad_pos else np.zeros_like(p_i)
    sum_neg = np.sum(grad_neg, axis=0) if grad_neg else np.zeros_like(p_i)

    if variant in (LossVariant.INFONCE_ND, LossVariant.INFONCE):
        pos_scale, neg_scale = gradient_scales(batch, anchor, variant)
        return -pos_scale * sum_pos + neg_scale * sum_neg

    sim = CosineGeometry(batch.preds).sim[anchor]
    if variant == LossVariant.SUPCON_ND:
        if negatives.size == 0:
            raise NumericalError("anchor without negatives")
        dis = 1.0 - sim
        z = float(dis[positives].sum() + dis[negatives].sum())
        grad = -sum_pos / z
        for j, g in zip(negatives, grad_neg):
            grad = grad + (1.0 / (negatives.size * dis[j]) - 1.0 / z) * g
        return grad
    if variant == LossVariant.SUPCON:
        if positives.size == 0:
            raise NumericalError("anchor without positives")
        z = float(sim[positives].sum() + sim[negatives].sum())
        grad = sum_neg / z
        for j, g in zip(positives, grad_pos):
            grad = grad + (1.0 / z - 1.0 / (positives.size * sim[j])) * g
        return grad
    raise InvalidParameterError(f"no contrastive loss for variant '{variant}'")


def cross_entropy_loss(preds: np.ndarray, labels: np.ndarray, with_grad: bool = False) -> LossValue:
    """Plain mean of -log p[y] over the batch (the unweighted ERM baseline)."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise InvalidParameterError("empty class set")
    rows = np.arange(labels.size)
    picked = preds[rows, labels]
    if np.any(picked <= 0):
        raise NumericalError("infinite CE loss")
    losses = -np.log(picked + EPS)
    grads = None
    if with_grad:
        grads = np.zeros_like(preds)
        grads[rows, labels] = -1.0 / (picked + EPS) / labels.size
    return LossValue(value=float(losses.mean()), grads=grads, per_anchor=losses)


def class_weights(preds: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Within-class softmax of per-sample cross-entropy losses."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = preds[np.arange(labels.size), labels]
    losses = -np.log(picked + EPS)
    weights = np.zeros_like(losses)
    for k in np.unique(labels):
        members = labels == k
        weights[members] = softmax(losses[members])
    return weights


def reweighted_ce_loss(
    preds: np.ndarray,
    labels: np.ndarray,
    with_grad: bool = False,
    stop_gradient: bool = False,
) -> LossValue:
    """
    (1/K') sum_k sum_i w_ki * l_ki with l = -log p[y] and w the within-class
    softmax of l; K' counts the classes present.

    The weights are differentiated through unless `stop_gradient` is set.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise InvalidParameterError("empty class set")
    if preds.ndim != 2 or preds.shape[0] != labels.size:
        raise InvalidParameterError("preds and labels differ in length")
    rows = np.arange(labels.size)
    picked = preds[rows, labels]
    if np.any(picked <= 0):
        raise NumericalError("infinite CE loss")

    losses = -np.log(picked + EPS)
    classes = np.unique(labels)
    present = classes.size
    weights = np.zeros_like(losses)
    coef = np.zeros_like(losses)
    value = 0.0
    for k in classes:
        members = labels == k
        w = softmax(losses[members])
        weighted = float(w @ losses[members])
        weights[members] = w
        coef[members] = w if stop_gradient else w * (1.0 + losses[members] - weighted)
        value += weighted
    value /= present

    grads = None
    if with_grad:
        grads = np.zeros_like(preds)
        grads[rows, labels] = -coef / (picked + EPS) / present
    if not np.isfinite(value):
        raise NumericalError("non-finite loss")
    return LossValue(value=value, grads=grads, per_anchor=weights)


def build_prototypes(preds: np.ndarray, labels: np.ndarray, domains: np.ndarray) -> PrototypeSet:
    """Mean prediction of every (class, domain) cell present, ordered by (class, domain)."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    domains = np.asarray(domains, dtype=np.int64)
    cells = sorted(set(zip(labels.tolist(), domains.tolist())))
    members = [np.flatnonzero((labels == k) & (domains == d)) for k, d in cells]
    return PrototypeSet(
        classes=[k for k, _ in cells],
        domains=[d for _, d in cells],
        protos=np.stack([preds[m].mean(axis=0) for m in members]) if cells else np.zeros((0, preds.shape[1])),
        members=members,
        num_samples=preds.shape[0],
    )


def prototype_alignment_loss(
    protos: PrototypeSet,
    with_grad: bool = False,
    denominator: PrototypeDenominator = PrototypeDenominator.ALL,
) -> LossValue:
    """
    SupCon over prototypes with exp(cosine) scores:
        sum_i -(1/|P(i)|) sum_p log[ exp(s_ip) / sum_a exp(s_ia) ]

    P(i) holds same-class prototypes from other domains; anchors with none are
    skipped. The denominator runs over every other prototype, or only those
    from other domains with `denominator=cross-domain`.
    """
    if protos.size < 2:
        raise NumericalError("degenerate prototype set")
    geometry = CosineGeometry(protos.protos)
    sim = geometry.sim
    same_class = protos.classes[:, None] == protos.classes[None, :]
    same_domain = protos.domains[:, None] == protos.domains[None, :]
    others = ~np.eye(protos.size, dtype=bool)
    pos = same_class & ~same_domain
    candidates = others & ~same_domain if PrototypeDenominator(denominator) == PrototypeDenominator.CROSS_DOMAIN else others
    n_pos = pos.sum(axis=1)
    active = n_pos > 0
    if not np.any(active):
        logger.debug("no prototype has a same-class partner in another domain")

    masked = np.where(candidates, sim, -np.inf)
    top = np.where(active, masked.max(axis=1), 0.0)
    exps = np.where(candidates, np.exp(sim - top[:, None]), 0.0)
    log_norm = top + np.log(np.where(active, exps.sum(axis=1), 1.0))
    count = np.maximum(n_pos, 1)
    per_anchor = np.where(active, -(sim * pos).sum(axis=1) / count + log_norm, 0.0)

    grad_sim = exps / np.where(active, exps.sum(axis=1), 1.0)[:, None] - pos / count[:, None]
    grad_sim[~active] = 0.0
    return _finish(per_anchor, grad_sim, geometry, with_grad)


def total_loss(
    ce: LossValue,
    con: LossValue,
    const: LossValue,
    alpha: float,
    beta: float,
) -> LossValue:
    """
    ce + alpha * con + beta * const, gradients combined the same way.

    Terms whose trade-off is exactly zero are left out rather than multiplied
    by zero, so a zero weight reproduces the bare cross-entropy bit for bit.
    """
    if alpha < 0 or beta < 0:
        raise InvalidParameterError("invalid trade-off")
    terms = [(1.0, ce)]
    if alpha:
        terms.append((alpha, con))
    if beta:
        terms.append((beta, const))

    value = 0.0
    grads: Optional[np.ndarray] = None
    with_grads = all(term.grads is not None for _, term in terms)
    for weight, term in terms:
        if not np.isfinite(term.value):
            raise NumericalError("non-finite loss component")
        value += weight * term.value
        if with_grads:
            if grads is None:
                grads = term.grads.copy() if weight == 1.0 else weight * term.grads
            else:
                if term.grads.shape != grads.shape:
                    raise InvalidParameterError("loss gradients differ in shape")
                grads = grads + weight * term.grads
    return LossValue(value=value, grads=grads)
