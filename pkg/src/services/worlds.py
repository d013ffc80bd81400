"""
Synthetic multi-domain worlds: Gaussian class-conditionals per domain with
a shared covariance, per-domain class priors and sample totals.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from ..models import Dataset, SplitPlan, SyntheticWorld, WorldConfig, WorldKind
from .errors import InvalidParameterError, PlanError
from .numkit import Rng, round_half_up
from .splits import read_plan

logger = logging.getLogger(__name__)

MISALIGNMENT_RATIO = 400
ABSORPTION_PER_CLASS = (100, 20, 4)
BALANCED_PER_CLASS = 10
TARGET_PER_CLASS = 100


def class_means(num_classes: int, radius: float = 2.0, dim: int = 2) -> np.ndarray:
    """Class means evenly spaced on a circle in the first two coordinates."""
    if num_classes < 2:
        raise InvalidParameterError("a world needs at least 2 classes")
    if dim < 2:
        raise InvalidParameterError("circle-placed means need dim >= 2")
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def _domain_offsets(num_domains: int, shift: float, dim: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_domains) / num_domains + np.pi / 4.0
    offsets = np.zeros((num_domains, dim))
    offsets[:, 0] = shift * np.cos(angles)
    offsets[:, 1] = shift * np.sin(angles)
    return offsets


def world_from_counts(
    name: str,
    counts: np.ndarray,
    target_domains: Sequence[int],
    radius: float = 2.0,
    domain_shift: float = 0.5,
    dim: int = 2,
) -> SyntheticWorld:
    counts = np.asarray(counts, dtype=np.int64)
    totals = counts.sum(axis=1)
    if np.any(totals == 0):
        raise PlanError("empty domain")
    means = class_means(counts.shape[1], radius, dim)[None, :, :] + _domain_offsets(counts.shape[0], domain_shift, dim)[:, None, :]
    return SyntheticWorld(
        name=name,
        means=means.tolist(),
        covariance=np.eye(dim).tolist(),
        priors=(counts / totals[:, None]).tolist(),
        totals=totals.tolist(),
        target_domains=list(target_domains),
    )


def make_prior_shift_world(source_total: int = 1000, target_total: int = 2000) -> SyntheticWorld:
    """
    Two classes N((-1, 0), I) and N((1, 0), I) in every domain; two source
    domains with priors (0.1, 0.9) and a target with (0.9, 0.1).
    """
    means = [[-1.0, 0.0], [1.0, 0.0]]
    return SyntheticWorld(
        name="prior-shift",
        means=[means, means, means],
        covariance=[[1.0, 0.0], [0.0, 1.0]],
        priors=[[0.1, 0.9], [0.1, 0.9], [0.9, 0.1]],
        totals=[source_total, source_total, target_total],
        target_domains=[2],
    )


def make_longtail_world(
    kind: WorldKind,
    num_classes: int = 2,
    radius: float = 2.0,
    domain_shift: float = 0.5,
    dim: int = 2,
) -> SyntheticWorld:
    """
    misalignment: two sources with mirrored 400:1 tails and a balanced target.
    absorption: sources of 100, 20 and 4 samples per class and a balanced target.
    balanced: three equal sources and a target, the control for both.
    """
    kind = WorldKind(kind)
    if num_classes < 2:
        raise InvalidParameterError("a world needs at least 2 classes")
    target_row = np.full(num_classes, TARGET_PER_CLASS)

    if kind == WorldKind.MISALIGNMENT:
        decay = MISALIGNMENT_RATIO ** (1.0 - np.arange(num_classes) / (num_classes - 1))
        head = round_half_up(decay)
        counts = np.stack([head, head[::-1], target_row])
    elif kind == WorldKind.ABSORPTION:
        counts = np.stack([np.full(num_classes, n) for n in ABSORPTION_PER_CLASS] + [target_row])
    elif kind == WorldKind.BALANCED:
        counts = np.full((4, num_classes), BALANCED_PER_CLASS)
        counts[-1] = target_row
    else:
        raise InvalidParameterError(f"'{kind.value}' is not a long-tail world")
    return world_from_counts(kind.value, counts, [counts.shape[0] - 1], radius, domain_shift, dim)


def world_from_plan(
    plan: SplitPlan,
    radius: float = 2.0,
    domain_shift: float = 0.5,
    dim: int = 2,
    target_domains: Optional[Sequence[int]] = None,
) -> SyntheticWorld:
    """Gaussian world with the plan's counts; the last domain is held out unless told otherwise."""
    targets = [plan.num_domains - 1] if target_domains is None else list(target_domains)
    return world_from_counts("plan", plan.matrix, targets, radius, domain_shift, dim)


def build_world(config: WorldConfig) -> SyntheticWorld:
    if config.kind == WorldKind.PRIOR_SHIFT:
        return make_prior_shift_world()
    if config.kind == WorldKind.PLAN:
        return world_from_plan(read_plan(config.plan_path), config.radius, config.domain_shift, config.dim)
    return make_longtail_world(config.kind, config.num_classes, config.radius, config.domain_shift, config.dim)


def cell_counts(world: SyntheticWorld, totals: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Integer class counts per domain summing exactly to the domain totals:
    floors of prior * total, remainders handed out largest first.
    """
    totals = np.asarray(world.totals if totals is None else totals, dtype=np.int64)
    priors = np.asarray(world.priors, dtype=np.float64)
    ideal = priors * totals[:, None]
    counts = np.floor(ideal + 1e-9).astype(np.int64)
    for d in range(counts.shape[0]):
        short = int(totals[d] - counts[d].sum())
        if short > 0:
            order = np.lexsort((np.arange(counts.shape[1]), -(ideal[d] - counts[d])))
            counts[d, order[:short]] += 1
    return counts


def draw_dataset(
    world: SyntheticWorld,
    rng: Rng,
    totals: Optional[Sequence[int]] = None,
    domains: Optional[List[int]] = None,
) -> Dataset:
    """Samples with exactly the per-cell counts of `cell_counts`, ordered by domain then class."""
    counts = cell_counts(world, totals)
    means = world.mean_array()
    chol = np.linalg.cholesky(np.asarray(world.covariance, dtype=np.float64))
    xs, ys, ds = [], [], []
    for d in range(world.num_domains) if domains is None else domains:
        for k in range(world.num_classes):
            n = int(counts[d, k])
            if n == 0:
                continue
            xs.append(means[d, k] + rng.normal(size=(n, world.dim)) @ chol.T)
            ys.append(np.full(n, k))
            ds.append(np.full(n, d))
    if not xs:
        raise PlanError("world holds no samples")
    return Dataset(x=np.concatenate(xs), y=np.concatenate(ys), d=np.concatenate(ds))
