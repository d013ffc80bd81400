"""
Desk-scale experiments. The prior-shift world has two source domains with
class priors (0.1, 0.9) and a target with (0.9, 0.1); the shortcut world lets
the second coordinate predict the class in the sources and reverses it in the
target. Deselected by default; run with `pytest -m slow`.
"""

import numpy as np
import pytest

from src.models import ClassGroup, DiagnosticsConfig, LossVariant, SyntheticWorld, TrainConfig
from src.services import diagnostics, trainer
from src.services.mlp import MlpModel
from src.services.numkit import Rng
from src.services.worlds import draw_dataset, make_prior_shift_world

pytestmark = pytest.mark.slow

SEEDS = range(5)
MINORITY = 0
GROUPS = [ClassGroup.FEW, ClassGroup.MANY]


@pytest.fixture(scope="module")
def world():
    return make_prior_shift_world(source_total=1000, target_total=2000)


@pytest.fixture(scope="module")
def shortcut_world():
    """Class by x in every domain; y tracks the class 9:1 in the sources and the other way round in the target."""
    return SyntheticWorld(
        name="shortcut",
        means=[
            [[-1.0, 1.5], [1.0, 1.5]],
            [[-1.0, -1.5], [1.0, -1.5]],
            [[-1.0, -1.5], [1.0, 1.5]],
        ],
        covariance=[[1.0, 0.0], [0.0, 1.0]],
        priors=[[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]],
        totals=[1000, 1000, 2000],
        target_domains=[2],
    )


def _fit(world, seed, **fields):
    config = TrainConfig(seed=seed, **fields)
    rng = Rng(seed)
    data = draw_dataset(world, rng.substream("train-data"), domains=world.source_domains)
    model = MlpModel.initialize([world.dim, *config.hidden, world.num_classes], rng.substream("init"), config.activation)
    return trainer.train(model, config, data, world.source_domains).model


def _held_out(world, seed):
    return draw_dataset(world, Rng(seed).substream("eval-data"))


def _accuracy(model, data, domains):
    part = data.in_domains(domains)
    probs, _ = trainer.predict(model, part.x)
    return diagnostics.grouped_accuracy(probs, part.y, GROUPS)


def _erm(world, seed):
    return _fit(world, seed, variant=LossVariant.CE_ONLY, ce_reweighting=False)


def test_erm_fails_on_the_source_minority_class(world):
    for seed in SEEDS:
        model = _erm(world, seed)
        data = _held_out(world, seed)
        source = _accuracy(model, data, world.source_domains).overall
        target_minority = _accuracy(model, data, world.target_domains).per_class[MINORITY]
        assert target_minority <= source - 0.10, f"seed {seed}: {target_minority:.3f} vs {source:.3f}"


def test_full_objective_lifts_the_minority_class(world):
    wins = 0
    for seed in SEEDS:
        data = _held_out(world, seed)
        erm = _accuracy(_erm(world, seed), data, world.target_domains).per_class[MINORITY]
        ndcl = _accuracy(_fit(world, seed), data, world.target_domains).per_class[MINORITY]
        wins += ndcl > erm
    assert wins >= 4


def test_diagnostics_track_accuracy(shortcut_world):
    """
    Across variants and weights, the average margin rises with target accuracy
    while small-margin mass and posterior discrepancy fall.
    """
    world = shortcut_world
    runs = [
        dict(variant=LossVariant.CE_ONLY, ce_reweighting=False),
        dict(variant=LossVariant.INFONCE_ND, ce_reweighting=False),
        dict(variant=LossVariant.CE_ONLY),
        dict(variant=LossVariant.INFONCE_ND),
        dict(variant=LossVariant.SUPCON_ND, alpha=0.5),
        dict(variant=LossVariant.INFONCE, alpha=0.1),
        dict(variant=LossVariant.INFONCE_ND, alpha=0.1, beta=1.0),
        dict(variant=LossVariant.INFONCE_ND, alpha=1.0, beta=1.0),
    ]
    reports = []
    for i, fields in enumerate(runs):
        model = _fit(world, seed=i, iterations=300, **fields)
        data = _held_out(world, i)
        reports.append(
            trainer.evaluate(model, data, world.source_domains, world.target_domains, GROUPS, DiagnosticsConfig(), seed=i)
        )
    accuracy = np.array([r.accuracy for r in reports])
    r_gamma, _ = diagnostics.pearson([r.avg_gamma for r in reports], accuracy)
    r_small, _ = diagnostics.pearson([r.small_margin_prob for r in reports], accuracy)
    r_pd, _ = diagnostics.pearson([r.posterior_discrepancy for r in reports], accuracy)
    assert r_gamma > 0
    assert r_small < 0
    assert r_pd < 0

