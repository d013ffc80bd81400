"""
Imbalanced class x domain sampling plans and their statistics.

Three regimes are generated:

- totalheavytail: every domain follows the same exponential class decay,
  n = base * exp(-tail * k), class index as rank.
- duality: even domains decay over ascending class ids, odd domains over
  descending ones, and domain sizes spread by `domain_imbalance`.
- mildgini: independent per-cell factors in [1/tail, 1], so the pooled class
  ratio stays below `tail_param`.
"""

import logging
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd

from ..models import ClassGroup, ImbalanceStats, Regime, SplitPlan, SplitSpec
from .errors import PlanError
from .numkit import Rng, round_half_up

logger = logging.getLogger(__name__)

PLAN_COLUMNS = ["domain_id", "class_id", "count", "group"]
_HEADER_KEYS = [
    "num_domains",
    "num_classes",
    "total_per_domain",
    "regime",
    "tail_param",
    "domain_imbalance",
    "many_threshold",
    "few_threshold",
    "seed",
]


def _raw_counts(spec: SplitSpec, rng: Rng) -> np.ndarray:
    n_dom, n_cls = spec.num_domains, spec.num_classes
    ranks = np.arange(n_cls, dtype=np.float64)
    base = float(spec.total_per_domain)

    if spec.regime == Regime.TOTAL_HEAVY_TAIL:
        return np.tile(base * np.exp(-spec.tail_param * ranks), (n_dom, 1))

    if spec.regime == Regime.DUALITY:
        scales = spec.domain_imbalance ** (-np.arange(n_dom) / (n_dom - 1))
        scales = rng.permutation(scales)
        rows = []
        for d in range(n_dom):
            order = ranks if d % 2 == 0 else ranks[::-1]
            rows.append(scales[d] * base * np.exp(-spec.tail_param * order))
        return np.stack(rows)

    factors = rng.uniform(1.0 / spec.tail_param, 1.0, size=(n_dom, n_cls))
    domain_factors = rng.uniform(0.75, 1.0, size=(n_dom, 1))
    return base * domain_factors * factors


def generate_plan(spec: SplitSpec, rng: Rng) -> SplitPlan:
    raw = _raw_counts(spec, rng)
    if np.any(np.all(raw <= 0.0, axis=0)):
        raise PlanError("class eliminated")
    counts = round_half_up(raw)

    # a class rounded away everywhere keeps one sample in its strongest domain
    for k in np.flatnonzero(counts.sum(axis=0) == 0):
        counts[int(np.argmax(raw[:, k])), k] = 1
        logger.debug("class %d rounded to zero everywhere, clamped to 1", k)
    if np.any(counts.sum(axis=1) == 0):
        raise PlanError("empty domain")

    return SplitPlan(
        counts=counts.tolist(),
        many_threshold=spec.many_threshold,
        few_threshold=spec.few_threshold,
        spec=spec,
    )


def compute_stats(plan: SplitPlan) -> ImbalanceStats:
    counts = plan.matrix
    domain_sizes = counts.sum(axis=1)
    if np.any(domain_sizes == 0):
        raise PlanError("empty domain")
    class_totals = counts.sum(axis=0)
    if np.any(class_totals == 0):
        raise PlanError("class eliminated")

    ecr = []
    for row in counts:
        present = row[row > 0]
        ecr.append(float(present.max() / present.min()))
    return ImbalanceStats(
        cr=float(class_totals.max() / class_totals.min()),
        dr=float(domain_sizes.max() / domain_sizes.min()),
        ecr=ecr,
    )


def group_classes(plan: SplitPlan) -> List[ClassGroup]:
    """Many at or above the upper threshold, Few at or below the lower one."""
    groups = []
    for total in plan.class_totals.tolist():
        if total >= plan.many_threshold:
            groups.append(ClassGroup.MANY)
        elif total <= plan.few_threshold:
            groups.append(ClassGroup.FEW)
        else:
            groups.append(ClassGroup.MEDIUM)
    return groups


def plan_to_frame(plan: SplitPlan) -> pd.DataFrame:
    groups = group_classes(plan)
    records = [
        {"domain_id": d, "class_id": k, "count": int(count), "group": groups[k].value}
        for d, row in enumerate(plan.counts)
        for k, count in enumerate(row)
    ]
    return pd.DataFrame(records, columns=PLAN_COLUMNS)


def _format_header_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def write_plan(plan: SplitPlan, path: Union[str, Path]) -> Path:
    """
    Header lines `# key=value` carry the generating spec and thresholds, the
    body is a CSV with one row per (domain, class).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"many_threshold": plan.many_threshold, "few_threshold": plan.few_threshold}
    if plan.spec is not None:
        header = {key: getattr(plan.spec, key) for key in _HEADER_KEYS}
    with path.open("w", encoding="utf-8", newline="") as handle:
        for key, value in header.items():
            handle.write(f"# {key}={_format_header_value(value)}\n")
        plan_to_frame(plan).to_csv(handle, index=False, lineterminator="\n")
    logger.info("wrote split plan to %s", path)
    return path


def read_plan(path: Union[str, Path]) -> SplitPlan:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"plan file not found: {path}")
    header = {}
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()

    frame = pd.read_csv(path, comment="#")
    missing = [c for c in PLAN_COLUMNS if c not in frame.columns]
    if missing:
        raise PlanError(f"plan file lacks columns: {', '.join(missing)}")
    n_dom = int(frame["domain_id"].max()) + 1
    n_cls = int(frame["class_id"].max()) + 1
    if len(frame) != n_dom * n_cls:
        raise PlanError("plan file does not cover every (domain, class) cell")
    counts = np.zeros((n_dom, n_cls), dtype=np.int64)
    counts[frame["domain_id"].to_numpy(), frame["class_id"].to_numpy()] = frame["count"].to_numpy()

    spec = SplitSpec(**header) if all(key in header for key in _HEADER_KEYS) else None
    return SplitPlan(
        counts=counts.tolist(),
        many_threshold=int(header.get("many_threshold", 100)),
        few_threshold=int(header.get("few_threshold", 20)),
        spec=spec,
    )
