"""
Evaluation quantities: decision margins, small-margin probability,
Jensen-Shannon posterior discrepancy, sliced-Wasserstein prior discrepancy,
grouped accuracy and Pearson correlation, plus the metrics table I/O.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import rel_entr

from ..models import (
    ClassGroup,
    DiagnosticsConfig,
    GroupedAccuracy,
    MarginRecord,
    MarginSurrogate,
    MetricsReport,
    PosteriorDiscrepancy,
    PriorDiscrepancy,
)
from .errors import InvalidParameterError, NumericalError
from .numkit import Rng

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
METRIC_COLUMNS = ["name", "qualifier", "value"]


def margin_values(
    preds: np.ndarray, labels: np.ndarray, surrogate: MarginSurrogate = MarginSurrogate.IDENTITY
) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.ndim != 2 or preds.shape[1] < 2:
        raise InvalidParameterError("margins need at least 2 classes")
    rows = np.arange(labels.size)
    own = preds[rows, labels]
    rivals = preds.copy()
    rivals[rows, labels] = -np.inf
    gap = own - rivals.max(axis=1)

    surrogate = MarginSurrogate(surrogate)
    if surrogate == MarginSurrogate.HINGE:
        return np.maximum(0.0, -gap)
    if surrogate == MarginSurrogate.SOFTPLUS:
        return np.logaddexp(0.0, gap)
    return gap


def margins(
    preds: np.ndarray,
    labels: np.ndarray,
    domains: Optional[np.ndarray] = None,
    surrogate: MarginSurrogate = MarginSurrogate.IDENTITY,
) -> List[MarginRecord]:
    """h_y(x) - max_{k != y} h_k(x) per sample, through the chosen surrogate."""
    gammas = margin_values(preds, labels, surrogate)
    labels = np.asarray(labels, dtype=np.int64)
    return [
        MarginRecord(
            sample_id=i,
            gamma=float(gammas[i]),
            label=int(labels[i]),
            domain=None if domains is None else int(domains[i]),
        )
        for i in range(labels.size)
    ]


def small_margin_prob(records: Union[Sequence[MarginRecord], np.ndarray], delta: float = 0.0) -> float:
    """Fraction of margins at or below delta."""
    if len(records) == 0:
        raise InvalidParameterError("no margin records")
    if isinstance(records, np.ndarray):
        gammas = records
    else:
        gammas = np.array([r.gamma for r in records], dtype=np.float64)
    return float(np.mean(gammas <= delta))


def _check_simplex(vec: np.ndarray) -> None:
    if np.any(vec < -SIMPLEX_TOL) or abs(float(vec.sum()) - 1.0) > SIMPLEX_TOL:
        raise InvalidParameterError("input is not a probability vector")


def js_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence in nats, within [0, ln 2]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidParameterError("vectors differ in length")
    _check_simplex(p)
    _check_simplex(q)
    p, q = np.clip(p, 0.0, None), np.clip(q, 0.0, None)
    m = 0.5 * (p + q)
    value = 0.5 * float(rel_entr(p, m).sum()) + 0.5 * float(rel_entr(q, m).sum())
    return float(np.clip(value, 0.0, np.log(2.0)))


def posterior_discrepancy(
    source_preds: np.ndarray,
    source_labels: np.ndarray,
    target_preds: np.ndarray,
    target_labels: np.ndarray,
    source_domains: Optional[np.ndarray] = None,
    pooled: bool = True,
) -> PosteriorDiscrepancy:
    """
    Per-class JS divergence between mean source and mean target predictions.

    Pooled mode averages all source samples of a class before comparing;
    otherwise each source domain is compared with the target and the
    divergences are averaged. Classes with no source samples are skipped.
    """
    source_preds = np.asarray(source_preds, dtype=np.float64)
    target_preds = np.asarray(target_preds, dtype=np.float64)
    source_labels = np.asarray(source_labels, dtype=np.int64)
    target_labels = np.asarray(target_labels, dtype=np.int64)
    if target_labels.size == 0:
        raise InvalidParameterError("no target samples")
    if not pooled and source_domains is None:
        raise InvalidParameterError("per-domain discrepancy needs source domains")

    per_class: Dict[int, float] = {}
    for k in np.unique(target_labels).tolist():
        in_source = source_labels == k
        if not np.any(in_source):
            logger.warning("class %d has no source samples, skipped in posterior discrepancy", k)
            continue
        target_mean = target_preds[target_labels == k].mean(axis=0)
        if pooled:
            per_class[k] = js_divergence(source_preds[in_source].mean(axis=0), target_mean)
        else:
            domains = np.asarray(source_domains, dtype=np.int64)
            values = [
                js_divergence(source_preds[in_source & (domains == d)].mean(axis=0), target_mean)
                for d in np.unique(domains[in_source]).tolist()
            ]
            per_class[k] = float(np.mean(values))
    if not per_class:
        raise InvalidParameterError("no class shared by source and target")
    return PosteriorDiscrepancy(per_class=per_class, mean=float(np.mean(list(per_class.values()))), pooled=pooled)


def _as_points(values: np.ndarray) -> np.ndarray:
    points = np.asarray(values, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2 or points.shape[0] == 0:
        raise InvalidParameterError("point sets must be non-empty")
    return points


def _match_quantiles(small: np.ndarray, size: int) -> np.ndarray:
    """Sorted columns of `small` interpolated at the quantile levels of a set of `size` points."""
    n = small.shape[0]
    if n == size:
        return small
    if n == 1:
        return np.repeat(small, size, axis=0)
    own_levels = (np.arange(n) + 0.5) / n
    levels = (np.arange(size) + 0.5) / size
    return np.stack([np.interp(levels, own_levels, small[:, j]) for j in range(small.shape[1])], axis=1)


def sliced_wasserstein(a: np.ndarray, b: np.ndarray, num_projections: int = 128, rng: Optional[Rng] = None) -> float:
    """
    Mean over random unit directions of the 1-D 2-Wasserstein distance
    between the projected point sets.
    """
    a, b = _as_points(a), _as_points(b)
    if a.shape[1] != b.shape[1]:
        raise InvalidParameterError("point sets differ in dimension")
    if num_projections < 1:
        raise InvalidParameterError("num_projections must be at least 1")
    rng = rng or Rng(0)
    directions = rng.normal(size=(num_projections, a.shape[1]))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = directions / np.where(norms > 0, norms, 1.0)

    proj_a = np.sort(a @ directions.T, axis=0)
    proj_b = np.sort(b @ directions.T, axis=0)
    if proj_a.shape[0] < proj_b.shape[0]:
        proj_a = _match_quantiles(proj_a, proj_b.shape[0])
    elif proj_b.shape[0] < proj_a.shape[0]:
        proj_b = _match_quantiles(proj_b, proj_a.shape[0])
    per_projection = np.sqrt(np.mean((proj_a - proj_b) ** 2, axis=0))
    return float(per_projection.mean())


def prior_discrepancy(
    features: np.ndarray,
    domains: np.ndarray,
    source_domains: Sequence[int],
    target_domains: Sequence[int],
    num_projections: int = 128,
    rng: Optional[Rng] = None,
) -> PriorDiscrepancy:
    """
    Sliced-Wasserstein between domains of learned features: mean over source
    pairs (SS) and over source-target pairs (ST).
    """
    features = np.asarray(features, dtype=np.float64)
    domains = np.asarray(domains, dtype=np.int64)
    rng = rng or Rng(0)
    by_domain = {d: features[domains == d] for d in list(source_domains) + list(target_domains)}
    empty = [d for d, rows in by_domain.items() if rows.shape[0] == 0]
    if empty:
        raise InvalidParameterError(f"no features for domain {empty[0]}")

    def distance(d1: int, d2: int) -> float:
        # one projection set per pair keeps the result independent of pair order
        return sliced_wasserstein(by_domain[d1], by_domain[d2], num_projections, rng.substream(f"sw-{d1}-{d2}"))

    sources = list(source_domains)
    ss_pairs = [(s1, s2) for i, s1 in enumerate(sources) for s2 in sources[i + 1:]]
    st_pairs = [(s, t) for s in sources for t in target_domains]
    if not st_pairs:
        raise InvalidParameterError("prior discrepancy needs a target domain")
    ss = float(np.mean([distance(*pair) for pair in ss_pairs])) if ss_pairs else None
    st = float(np.mean([distance(*pair) for pair in st_pairs]))
    return PriorDiscrepancy(source_source=ss, source_target=st)


def centroid_distances(features: np.ndarray, labels: np.ndarray, domains: np.ndarray) -> Dict[Tuple[int, int], float]:
    """Distance from every (domain, class) centroid to its domain centroid."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    domains = np.asarray(domains, dtype=np.int64)
    out: Dict[Tuple[int, int], float] = {}
    for d in np.unique(domains).tolist():
        in_domain = domains == d
        center = features[in_domain].mean(axis=0)
        for k in np.unique(labels[in_domain]).tolist():
            out[(d, k)] = float(np.linalg.norm(features[in_domain & (labels == k)].mean(axis=0) - center))
    return out


def grouped_accuracy(preds: np.ndarray, labels: np.ndarray, groups: Sequence[ClassGroup]) -> GroupedAccuracy:
    """Overall accuracy plus the macro accuracy of each class group present."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InvalidParameterError("no samples to score")
    if len(groups) < preds.shape[1] or labels.max() >= len(groups):
        raise InvalidParameterError("group assignment does not cover every class")
    correct = np.argmax(preds, axis=1) == labels
    per_class = {k: float(correct[labels == k].mean()) for k in np.unique(labels).tolist()}

    per_group: Dict[ClassGroup, float] = {}
    for group in ClassGroup:
        members = [per_class[k] for k in per_class if ClassGroup(groups[k]) == group]
        if members:
            per_group[group] = float(np.mean(members))
    return GroupedAccuracy(overall=float(correct.mean()), per_group=per_group, per_class=per_class)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    """Sample correlation and its two-sided p-value (t with n - 2 degrees of freedom)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidParameterError("series differ in length")
    n = x.size
    if n < 3:
        raise InvalidParameterError("pearson needs at least 3 paired points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise NumericalError("degenerate series")
    r = float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), n - 2))


def build_report(
    probs: np.ndarray,
    labels: np.ndarray,
    groups: Sequence[ClassGroup],
    config: DiagnosticsConfig,
    posterior: PosteriorDiscrepancy,
    prior: Optional[PriorDiscrepancy] = None,
) -> MetricsReport:
    """
    Assemble the metrics of one evaluation set (normally the target domains).

    Margin statistics are taken on the raw gap; a non-identity surrogate only
    adds its own average.
    """
    labels = np.asarray(labels, dtype=np.int64)
    gammas = margin_values(probs, labels)
    avg_surrogate = None
    if config.surrogate != MarginSurrogate.IDENTITY:
        avg_surrogate = float(margin_values(probs, labels, config.surrogate).mean())
    accuracy = grouped_accuracy(probs, labels, groups)
    class_margin = {k: float(gammas[labels == k].mean()) for k in np.unique(labels).tolist()}
    return MetricsReport(
        num_samples=int(labels.size),
        delta=config.delta,
        surrogate=config.surrogate,
        avg_gamma=float(gammas.mean()),
        small_margin_prob=small_margin_prob(gammas, config.delta),
        avg_surrogate=avg_surrogate,
        posterior_discrepancy=posterior.mean,
        posterior_discrepancy_per_class=posterior.per_class,
        prior_discrepancy_ss=None if prior is None else prior.source_source,
        prior_discrepancy_st=None if prior is None else prior.source_target,
        accuracy=accuracy.overall,
        group_accuracy=accuracy.per_group,
        class_accuracy=accuracy.per_class,
        class_margin=class_margin,
    )


def write_metrics(report: MetricsReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(report.to_rows(), columns=METRIC_COLUMNS)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info("wrote metrics to %s", path)
    return path


def read_metrics(path: Union[str, Path]) -> MetricsReport:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metrics file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return MetricsReport.from_rows(list(frame[METRIC_COLUMNS].itertuples(index=False, name=None)))
