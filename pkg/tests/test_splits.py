import math

import numpy as np
import pytest

from src.models import ClassGroup, Regime, SplitPlan, SplitSpec
from src.services.errors import PlanError
from src.services.numkit import Rng
from src.services.splits import (
    PLAN_COLUMNS,
    compute_stats,
    generate_plan,
    group_classes,
    plan_to_frame,
    read_plan,
    write_plan,
)


def _generate(**fields):
    spec = SplitSpec(**fields)
    return generate_plan(spec, Rng(spec.seed).substream("splits"))


class TestGeneratePlan:
    def test_total_heavy_tail_example(self):
        plan = _generate(regime=Regime.TOTAL_HEAVY_TAIL, num_domains=2, num_classes=3, tail_param=math.log(4), total_per_domain=160)
        assert plan.counts == [[160, 40, 10], [160, 40, 10]]
        assert compute_stats(plan).cr == pytest.approx(16.0)

    def test_duality_example(self):
        plan = _generate(regime=Regime.DUALITY, num_domains=2, num_classes=2, tail_param=math.log(10), total_per_domain=100)
        assert plan.counts == [[100, 10], [10, 100]]
        stats = compute_stats(plan)
        assert stats.cr == pytest.approx(1.0)
        assert stats.dr == pytest.approx(1.0)
        assert stats.ecr == pytest.approx([10.0, 10.0])

    @pytest.mark.parametrize("regime", list(Regime))
    def test_deterministic_under_seed(self, regime):
        fields = dict(regime=regime, num_domains=4, num_classes=6, tail_param=3.0, domain_imbalance=4.0, seed=11)
        assert _generate(**fields).counts == _generate(**fields).counts

    @pytest.mark.parametrize("classes,tail,base", [(5, 1.0, 200), (10, 0.5, 1000), (4, 1.5, 500)])
    def test_total_heavy_tail_hits_target_ratio(self, classes, tail, base):
        plan = _generate(regime=Regime.TOTAL_HEAVY_TAIL, num_domains=3, num_classes=classes, tail_param=tail, total_per_domain=base)
        target = math.exp(tail * (classes - 1))
        assert abs(compute_stats(plan).cr - target) / target <= 0.15
        ranks = [np.argsort(-np.asarray(row), kind="stable").tolist() for row in plan.counts]
        assert all(r == ranks[0] for r in ranks)

    @pytest.mark.parametrize("domains,imbalance", [(2, 1.0), (3, 5.0), (4, 10.0)])
    def test_duality_mirror_and_domain_ratio(self, domains, imbalance):
        plan = _generate(
            regime=Regime.DUALITY,
            num_domains=domains,
            num_classes=5,
            tail_param=1.0,
            total_per_domain=200,
            domain_imbalance=imbalance,
            few_threshold=20,
            seed=3,
        )
        counts = plan.matrix
        assert abs(compute_stats(plan).dr - imbalance) / imbalance <= 0.10
        for d, row in enumerate(counts):
            dominant = int(np.argmax(row))
            others = [counts[e, dominant] for e in range(len(counts)) if e != d]
            assert min(others) <= plan.few_threshold

    def test_mild_gini_ratio_is_bounded(self):
        for seed in range(10):
            plan = _generate(regime=Regime.MILD_GINI, num_domains=4, num_classes=7, tail_param=3.0, seed=seed)
            assert 1.0 <= compute_stats(plan).cr <= 3.0 * 1.05

    def test_class_rounded_away_is_clamped(self):
        plan = _generate(regime=Regime.TOTAL_HEAVY_TAIL, num_domains=2, num_classes=3, tail_param=10.0, total_per_domain=10)
        assert plan.matrix[:, 2].sum() == 1
        assert plan.counts[0][2] == 1


class TestStats:
    def test_uniform(self):
        stats = compute_stats(SplitPlan(counts=[[5, 5], [5, 5], [5, 5]]))
        assert stats.cr == 1.0 and stats.dr == 1.0 and stats.ecr == [1.0, 1.0, 1.0]

    def test_pooled_class_ratio(self):
        plan = SplitPlan(counts=[[352, 115, 32], [352, 114, 32]])
        assert compute_stats(plan).cr == pytest.approx(11.0)

    def test_ratio_formula_on_hand_built_matrix(self):
        plan = SplitPlan(counts=[[2600, 50], [92, 50]])
        stats = compute_stats(plan)
        assert stats.cr == pytest.approx(26.92)
        assert stats.dr == pytest.approx(2650 / 142)
        assert stats.ecr == pytest.approx([52.0, 1.84])

    def test_absent_cells_are_ignored_in_domain_ratio(self):
        stats = compute_stats(SplitPlan(counts=[[10, 0, 5], [1, 2, 3]]))
        assert stats.ecr == pytest.approx([2.0, 3.0])

    def test_scale_invariance(self, rng):
        counts = rng.integers(1, 50, size=(3, 4))
        base = compute_stats(SplitPlan(counts=counts.tolist()))
        scaled = compute_stats(SplitPlan(counts=(counts * 7).tolist()))
        assert scaled.cr == pytest.approx(base.cr)
        assert scaled.dr == pytest.approx(base.dr)
        assert scaled.ecr == pytest.approx(base.ecr)

    def test_empty_domain(self):
        with pytest.raises(PlanError, match="empty domain"):
            compute_stats(SplitPlan(counts=[[0, 0], [1, 2]]))


class TestGroups:
    def test_examples(self):
        plan = SplitPlan(counts=[[160, 50, 10]], many_threshold=100, few_threshold=20)
        assert group_classes(plan) == [ClassGroup.MANY, ClassGroup.MEDIUM, ClassGroup.FEW]

    def test_thresholds_are_inclusive(self):
        plan = SplitPlan(counts=[[60, 10], [40, 10]], many_threshold=100, few_threshold=20)
        assert group_classes(plan) == [ClassGroup.MANY, ClassGroup.FEW]

    def test_all_medium(self):
        plan = SplitPlan(counts=[[50, 60, 70]])
        assert set(group_classes(plan)) == {ClassGroup.MEDIUM}


class TestPlanFile:
    def test_round_trip(self, tmp_path):
        plan = _generate(regime=Regime.DUALITY, num_domains=3, num_classes=4, tail_param=0.8, domain_imbalance=2.5, seed=5)
        path = write_plan(plan, tmp_path / "plan.csv")
        loaded = read_plan(path)
        assert loaded.counts == plan.counts
        assert loaded.spec == plan.spec
        assert (loaded.many_threshold, loaded.few_threshold) == (plan.many_threshold, plan.few_threshold)

    def test_regenerated_file_is_byte_identical(self, tmp_path):
        fields = dict(regime=Regime.MILD_GINI, num_domains=3, num_classes=5, tail_param=4.0, seed=21)
        first = write_plan(_generate(**fields), tmp_path / "a.csv")
        second = write_plan(_generate(**fields), tmp_path / "b.csv")
        assert first.read_bytes() == second.read_bytes()

    def test_frame_layout(self):
        frame = plan_to_frame(SplitPlan(counts=[[3, 1], [2, 2]], many_threshold=5, few_threshold=3))
        assert list(frame.columns) == PLAN_COLUMNS
        assert len(frame) == 4
        assert frame.loc[1, "group"] == "Few"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_plan(tmp_path / "absent.csv")


class TestSplitSpec:
    def test_negative_tail(self):
        with pytest.raises(ValueError, match="tail_param must be positive"):
            SplitSpec(tail_param=-1.0)

    def test_thresholds(self):
        with pytest.raises(ValueError):
            SplitSpec(many_threshold=10, few_threshold=10)

    def test_domain_imbalance(self):
        with pytest.raises(ValueError):
            SplitSpec(domain_imbalance=0.5)
