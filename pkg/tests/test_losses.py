import math

import numpy as np
import pytest

from src.models import ContrastiveBatch, LossValue, LossVariant, PrototypeDenominator, PrototypeSet
from src.services.errors import InvalidParameterError, NumericalError
from src.services.losses import (
    CONTRASTIVE_LOSSES,
    amplification_factor,
    anchor_gradient,
    build_prototypes,
    class_weights,
    contrastive_loss,
    cross_entropy_loss,
    gradient_scales,
    infonce_classic_loss,
    infonce_nd_loss,
    prototype_alignment_loss,
    reweighted_ce_loss,
    supcon_nd_loss,
    total_loss,
)
from src.services.numkit import Rng, cosine_sim_grad, finite_diff_grad, relative_error, softmax

VARIANTS = list(CONTRASTIVE_LOSSES)


def _cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def _oracle(variant, preds, labels):
    """Per-anchor terms from explicit loops over pairs."""
    preds = [list(map(float, row)) for row in preds]
    labels = list(map(int, labels))
    n = len(preds)
    terms = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        pos = [j for j in others if labels[j] == labels[i]]
        neg = [j for j in others if labels[j] != labels[i]]
        if variant == LossVariant.INFONCE_ND:
            den = sum(1.0 - _cos(preds[i], preds[a]) for a in others)
            num = sum(1.0 - _cos(preds[i], preds[j]) for j in neg) / len(neg)
            terms.append(-math.log(num / den))
        elif variant == LossVariant.SUPCON_ND:
            den = sum(1.0 - _cos(preds[i], preds[a]) for a in others)
            terms.append(-sum(math.log((1.0 - _cos(preds[i], preds[j])) / den) for j in neg) / len(neg))
        elif variant == LossVariant.INFONCE:
            den = sum(_cos(preds[i], preds[a]) for a in others)
            num = sum(_cos(preds[i], preds[j]) for j in pos) / len(pos)
            terms.append(-math.log(num / den))
        else:
            den = sum(_cos(preds[i], preds[a]) for a in others)
            terms.append(-sum(math.log(_cos(preds[i], preds[j]) / den) for j in pos) / len(pos))
    return np.array(terms)


def _spread_batch(rng, rows, classes, min_gap=1e-6):
    """Random batch, redrawn until no negative pair is within `min_gap` of cosine 1."""
    labels = rng.permutation(np.arange(rows) % min(classes, rows // 2))
    neg = labels[:, None] != labels[None, :]
    while True:
        preds = softmax(rng.normal(scale=1.5, size=(rows, classes)))
        unit = preds / np.linalg.norm(preds, axis=1, keepdims=True)
        if np.min(1.0 - unit @ unit.T, where=neg, initial=np.inf) >= min_gap:
            return ContrastiveBatch(preds=preds, labels=labels)


def _random_batches(seed, count):
    rng = Rng(seed)
    for _ in range(count):
        rows = int(rng.integers(4, 33))
        classes = int(rng.integers(2, 9))
        distinct = min(classes, rows // 2)
        labels = rng.permutation(np.arange(rows) % distinct)
        preds = softmax(rng.normal(scale=1.5, size=(rows, classes)))
        yield ContrastiveBatch(preds=preds, labels=labels)


def _unit(angle):
    return [math.cos(angle), math.sin(angle)]


class TestContrastiveValues:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_matches_loop_oracle(self, variant):
        """Vectorised losses agree with the pairwise loops within 1e-9 on 100 random batches."""
        for batch in _random_batches(seed=100, count=100):
            value = contrastive_loss(variant, batch)
            expected = _oracle(variant, batch.preds, batch.labels)
            np.testing.assert_allclose(value.per_anchor, expected, atol=1e-9)
            assert value.value == pytest.approx(expected.sum(), abs=1e-9)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_permutation_invariance(self, variant, random_batch, rng):
        batch = random_batch(rows=12, classes=4)
        shuffled = batch.permuted(rng.permutation(batch.size))
        assert abs(contrastive_loss(variant, batch).value - contrastive_loss(variant, shuffled).value) < 1e-12

    def test_infonce_nd_worked_anchor(self):
        batch = ContrastiveBatch(preds=[[0.9, 0.1], [0.8, 0.2], [0.1, 0.9]], labels=[0, 0, 1])
        s_pos = 0.74 / math.sqrt(0.82 * 0.68)
        s_neg = 0.18 / 0.82
        expected = -math.log((1 - s_neg) / ((1 - s_pos) + (1 - s_neg)))
        term = infonce_nd_loss(batch).per_anchor[0]
        assert term == pytest.approx(expected, abs=1e-10)
        assert term == pytest.approx(0.01147, abs=2e-5)

    def test_infonce_nd_orthogonal_negatives(self):
        """Orthogonal negatives put 1 in the numerator: the term is log(sum_a (1 - s))."""
        preds = [[1.0, 0.0, 0.0], [0.8, 0.6, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]
        batch = ContrastiveBatch(preds=preds, labels=[0, 0, 1, 1])
        s = _cos(preds[0], preds[1])
        terms = infonce_nd_loss(batch).per_anchor
        assert terms[0] == pytest.approx(math.log(3.0 - s), abs=1e-12)
        assert terms[1] == pytest.approx(math.log(3.0 - s), abs=1e-12)

    def test_supcon_nd_single_negative_is_self_normalising(self):
        batch = ContrastiveBatch(preds=[[0.7, 0.3], [0.2, 0.8]], labels=[0, 1])
        assert supcon_nd_loss(batch).value == pytest.approx(0.0, abs=1e-12)

    def test_infonce_classic_copied_positives(self):
        batch = ContrastiveBatch(preds=[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], labels=[0, 0, 1])
        value = infonce_classic_loss(batch, strict=False)
        np.testing.assert_allclose(value.per_anchor, [0.0, 0.0, 0.0], atol=1e-12)


class TestContrastiveErrors:
    @pytest.mark.parametrize("variant", [LossVariant.INFONCE_ND, LossVariant.SUPCON_ND])
    def test_anchor_without_negatives(self, variant):
        batch = ContrastiveBatch(preds=[[0.6, 0.4], [0.3, 0.7]], labels=[1, 1])
        with pytest.raises(NumericalError, match="anchor without negatives"):
            contrastive_loss(variant, batch)
        assert contrastive_loss(variant, batch, strict=False).value == 0.0

    @pytest.mark.parametrize("variant", [LossVariant.INFONCE, LossVariant.SUPCON])
    def test_anchor_without_positives(self, variant):
        batch = ContrastiveBatch(preds=[[0.6, 0.4], [0.3, 0.7]], labels=[0, 1])
        with pytest.raises(NumericalError, match="anchor without positives"):
            contrastive_loss(variant, batch)

    def test_degenerate_neighborhood(self):
        batch = ContrastiveBatch(preds=[[0.5, 0.5]] * 3, labels=[0, 0, 1])
        with pytest.raises(NumericalError, match="degenerate anchor neighborhood"):
            infonce_nd_loss(batch)

    def test_negatives_coincide_with_anchor(self):
        batch = ContrastiveBatch(preds=[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], labels=[0, 0, 1])
        with pytest.raises(NumericalError, match="negatives coincide with anchor"):
            infonce_nd_loss(batch)

    def test_supcon_nd_log_of_zero(self):
        batch = ContrastiveBatch(preds=[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], labels=[0, 1, 1])
        with pytest.raises(NumericalError, match="log of zero"):
            supcon_nd_loss(batch)

    def test_supcon_nd_drops_coinciding_negatives_when_lenient(self):
        batch = ContrastiveBatch(preds=[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], labels=[0, 1, 1])
        value = supcon_nd_loss(batch, with_grad=True, strict=False)
        # anchor 1 keeps no negative; anchor 2 sees one at distance 1 over a neighborhood of 2
        np.testing.assert_allclose(value.per_anchor, [0.0, 0.0, math.log(2.0)], atol=1e-12)
        assert np.all(np.isfinite(value.grads))

    def test_supcon_nd_lenient_matches_strict_without_coinciding_pairs(self, random_batch):
        batch = random_batch(rows=8, classes=3)
        strict, lenient = supcon_nd_loss(batch, with_grad=True), supcon_nd_loss(batch, with_grad=True, strict=False)
        assert lenient.value == strict.value
        np.testing.assert_array_equal(lenient.grads, strict.grads)

    def test_infonce_nd_skips_anchor_whose_negatives_coincide_when_lenient(self):
        batch = ContrastiveBatch(preds=[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], labels=[0, 0, 1])
        value = infonce_nd_loss(batch, with_grad=True, strict=False)
        assert value.per_anchor[0] == 0.0
        assert np.all(np.isfinite(value.per_anchor)) and np.all(np.isfinite(value.grads))

    def test_unknown_variant(self, random_batch):
        with pytest.raises(InvalidParameterError):
            contrastive_loss(LossVariant.CE_ONLY, random_batch())

    def test_batch_validation(self):
        with pytest.raises(ValueError):
            ContrastiveBatch(preds=[[0.5, 0.5]], labels=[0])
        with pytest.raises(ValueError):
            ContrastiveBatch(preds=[[0.5, 0.5], [0.2, 0.8]], labels=[0])


class TestContrastiveGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_total_gradient_matches_finite_differences(self, variant):
        loss_fn = CONTRASTIVE_LOSSES[variant]
        rng = Rng(200)
        for _ in range(100):
            batch = _spread_batch(rng, rows=int(rng.integers(4, 33)), classes=int(rng.integers(2, 9)))
            analytic = loss_fn(batch, with_grad=True).grads
            numeric = finite_diff_grad(lambda p: loss_fn(batch.with_preds(p)).value, batch.preds, h=1e-6)
            assert relative_error(analytic, numeric) < 1e-5

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_anchor_gradient_matches_finite_differences(self, variant, random_batch):
        batch = random_batch(rows=8, classes=4)
        loss_fn = CONTRASTIVE_LOSSES[variant]
        for anchor in range(batch.size):

            def anchor_term(p_i):
                preds = batch.preds.copy()
                preds[anchor] = p_i
                return loss_fn(batch.with_preds(preds)).per_anchor[anchor]

            numeric = finite_diff_grad(anchor_term, batch.preds[anchor])
            assert relative_error(anchor_gradient(batch, anchor, variant), numeric) < 1e-5

    def test_gradients_have_prediction_shape(self, random_batch):
        batch = random_batch(rows=6, classes=3)
        for variant in VARIANTS:
            assert contrastive_loss(variant, batch, with_grad=True).grads.shape == batch.preds.shape
            assert contrastive_loss(variant, batch).grads is None


class TestAmplification:
    def _three_point_batch(self, anchor_angle, pos_angle, neg_angle):
        return ContrastiveBatch(
            preds=[_unit(anchor_angle), _unit(pos_angle), _unit(neg_angle)],
            labels=[0, 0, 1],
        )

    def test_examples(self):
        half = math.acos(0.5)
        assert amplification_factor(self._three_point_batch(0.0, half, -half), 0) == pytest.approx(1.0, rel=1e-9)
        batch = self._three_point_batch(0.0, math.acos(0.9), math.acos(0.99))
        assert amplification_factor(batch, 0) == pytest.approx(10.0, rel=1e-9)

    def test_needs_positive_and_negative(self):
        batch = ContrastiveBatch(preds=[[1.0, 0.0], [0.0, 1.0]], labels=[0, 1])
        with pytest.raises(NumericalError):
            amplification_factor(batch, 0)

    def test_negatives_coincide(self):
        batch = self._three_point_batch(0.3, 0.9, 0.3)
        with pytest.raises(NumericalError, match="negatives coincide with anchor"):
            amplification_factor(batch, 0)

    def test_monotone_in_negative_similarity(self):
        """Moving a negative toward the anchor strictly raises the factor and the ND repulsion scale."""
        rng = Rng(300)
        violations = 0
        for _ in range(1000):
            anchor, pos, neg = rng.uniform(0.0, math.pi / 2, size=3)
            if min(abs(anchor - pos), abs(anchor - neg)) < 1e-2:
                continue
            closer = anchor + float(rng.uniform(0.1, 0.9)) * (neg - anchor)
            before = self._three_point_batch(anchor, pos, neg)
            after = self._three_point_batch(anchor, pos, closer)
            if not amplification_factor(after, 0) > amplification_factor(before, 0):
                violations += 1
            if not gradient_scales(after, 0, LossVariant.INFONCE_ND)[1] > gradient_scales(before, 0, LossVariant.INFONCE_ND)[1]:
                violations += 1
        assert violations == 0

    def test_classic_mirror(self):
        """Classical InfoNCE: positive scale grows as positives drift away; negatives always get 1/Z."""
        rng = Rng(301)
        violations = 0
        for _ in range(1000):
            anchor, pos, neg = rng.uniform(0.0, math.pi / 2, size=3)
            if abs(anchor - pos) < 1e-2:
                continue
            farther = anchor + float(rng.uniform(1.05, 1.5)) * (pos - anchor)
            if not 0.0 <= farther <= math.pi / 2:
                continue
            before = self._three_point_batch(anchor, pos, neg)
            after = self._three_point_batch(anchor, farther, neg)
            if not gradient_scales(after, 0, LossVariant.INFONCE)[0] > gradient_scales(before, 0, LossVariant.INFONCE)[0]:
                violations += 1
            sim = [_cos(_unit(anchor), _unit(a)) for a in (farther, neg)]
            if abs(gradient_scales(after, 0, LossVariant.INFONCE)[1] * sum(sim) - 1.0) > 1e-12:
                violations += 1
        assert violations == 0

    def test_halved_negative_dissimilarity(self):
        """Halving sum_n (1 - s) strictly increases the ND negative-gradient norm at the anchor."""
        anchor, pos = 0.2, 0.6
        neg = 1.2
        s_neg = math.cos(neg - anchor)
        closer = anchor + math.acos(1.0 - (1.0 - s_neg) / 2.0)
        before = self._three_point_batch(anchor, pos, neg)
        after = self._three_point_batch(anchor, pos, closer)

        def repulsion_norm(batch):
            _, scale = gradient_scales(batch, 0, LossVariant.INFONCE_ND)
            return scale * np.linalg.norm(cosine_sim_grad(batch.preds[0], batch.preds[2]))

        assert 1.0 - _cos(_unit(anchor), _unit(closer)) == pytest.approx((1.0 - s_neg) / 2.0)
        assert repulsion_norm(after) > repulsion_norm(before)

    def test_scales_only_for_infonce_variants(self, random_batch):
        with pytest.raises(InvalidParameterError):
            gradient_scales(random_batch(), 0, LossVariant.SUPCON_ND)


class TestCrossEntropy:
    def test_equal_losses_give_uniform_weights(self):
        value = reweighted_ce_loss(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([0, 0]))
        np.testing.assert_allclose(value.per_anchor, [0.5, 0.5])
        assert value.value == pytest.approx(math.log(2.0))

    def test_softmax_weights_over_losses(self):
        value = reweighted_ce_loss(np.array([[1.0, 0.0], [1 / 3, 2 / 3]]), np.array([0, 0]))
        np.testing.assert_allclose(value.per_anchor, [0.25, 0.75], atol=1e-9)
        assert value.value == pytest.approx(0.75 * math.log(3.0), abs=1e-9)

    def test_divides_by_present_classes(self):
        preds = np.array([[0.5, 0.5, 0.0], [0.25, 0.75, 0.0]])
        value = reweighted_ce_loss(preds, np.array([0, 1]))
        assert value.value == pytest.approx((math.log(2.0) + math.log(4 / 3)) / 2, abs=1e-9)

    def test_gradient_through_weights(self, rng):
        for _ in range(10):
            preds = softmax(rng.normal(scale=1.5, size=(10, 4)))
            labels = rng.permutation(np.arange(10) % 3)
            analytic = reweighted_ce_loss(preds, labels, with_grad=True).grads
            numeric = finite_diff_grad(lambda p: reweighted_ce_loss(p, labels).value, preds)
            assert relative_error(analytic, numeric) < 1e-5

    def test_stop_gradient_treats_weights_as_constants(self, rng):
        preds = softmax(rng.normal(size=(6, 3)))
        labels = np.array([0, 0, 1, 1, 2, 2])
        value = reweighted_ce_loss(preds, labels, with_grad=True, stop_gradient=True)
        rows = np.arange(6)
        expected = np.zeros_like(preds)
        expected[rows, labels] = -value.per_anchor / preds[rows, labels] / 3
        np.testing.assert_allclose(value.grads, expected, rtol=1e-9)

    def test_weights_are_distributions_monotone_in_loss(self, rng):
        preds = softmax(rng.normal(size=(20, 3)))
        labels = rng.integers(0, 3, size=20)
        weights = class_weights(preds, labels)
        losses = -np.log(preds[np.arange(20), labels])
        for k in np.unique(labels):
            members = labels == k
            assert weights[members].sum() == pytest.approx(1.0)
            order = np.argsort(losses[members])
            assert np.all(np.diff(weights[members][order]) >= 0)

    def test_errors(self):
        with pytest.raises(NumericalError, match="infinite CE loss"):
            reweighted_ce_loss(np.array([[1.0, 0.0]]), np.array([1]))
        with pytest.raises(InvalidParameterError, match="empty class set"):
            reweighted_ce_loss(np.zeros((0, 2)), np.array([], dtype=int))

    def test_plain_mean_cross_entropy(self, rng):
        preds = softmax(rng.normal(size=(7, 3)))
        labels = rng.integers(0, 3, size=7)
        value = cross_entropy_loss(preds, labels, with_grad=True)
        assert value.value == pytest.approx(-np.log(preds[np.arange(7), labels]).mean())
        numeric = finite_diff_grad(lambda p: cross_entropy_loss(p, labels).value, preds)
        assert relative_error(value.grads, numeric) < 1e-5
        with pytest.raises(NumericalError, match="infinite CE loss"):
            cross_entropy_loss(np.array([[0.0, 1.0]]), np.array([0]))


class TestPrototypeAlignment:
    def _two_by_two(self):
        return PrototypeSet(
            classes=[0, 0, 1, 1],
            domains=[0, 1, 0, 1],
            protos=[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]],
        )

    def test_identical_pair(self):
        protos = PrototypeSet(classes=[0, 0], domains=[0, 1], protos=[[0.3, 0.7], [0.3, 0.7]])
        assert prototype_alignment_loss(protos).value == pytest.approx(0.0, abs=1e-12)

    def test_two_classes_two_domains_cross_domain_denominator(self):
        value = prototype_alignment_loss(self._two_by_two(), denominator=PrototypeDenominator.CROSS_DOMAIN)
        np.testing.assert_allclose(value.per_anchor, [math.log(1 + 1 / math.e)] * 4, atol=1e-12)
        assert value.value == pytest.approx(1.253047, abs=1e-6)

    def test_two_classes_two_domains_full_denominator(self):
        value = prototype_alignment_loss(self._two_by_two())
        np.testing.assert_allclose(value.per_anchor, [math.log(1 + 2 / math.e)] * 4, atol=1e-12)
        assert value.value == pytest.approx(4 * math.log(1 + 2 / math.e), abs=1e-12)

    @pytest.mark.parametrize("denominator", list(PrototypeDenominator))
    def test_gradient(self, denominator, rng):
        classes, domains = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
        protos = PrototypeSet(
            classes=classes.reshape(-1),
            domains=domains.reshape(-1),
            protos=softmax(rng.normal(scale=1.5, size=(9, 4))),
        )
        analytic = prototype_alignment_loss(protos, with_grad=True, denominator=denominator).grads
        numeric = finite_diff_grad(
            lambda p: prototype_alignment_loss(protos.with_protos(p), denominator=denominator).value,
            protos.protos,
        )
        assert relative_error(analytic, numeric) < 1e-5

    def test_gradient_reaches_member_predictions(self, rng):
        preds = softmax(rng.normal(size=(12, 3)))
        labels = np.array([0, 0, 1, 1, 2, 2] * 2)
        domains = np.repeat([0, 1], 6)

        def loss(p):
            return prototype_alignment_loss(build_prototypes(p, labels, domains)).value

        protos = build_prototypes(preds, labels, domains)
        analytic = protos.scatter(prototype_alignment_loss(protos, with_grad=True).grads)
        assert relative_error(analytic, finite_diff_grad(loss, preds)) < 1e-5

    def test_build_prototypes(self):
        preds = np.array([[0.2, 0.8], [0.4, 0.6], [0.9, 0.1]])
        protos = build_prototypes(preds, np.array([1, 1, 0]), np.array([0, 0, 1]))
        np.testing.assert_array_equal(protos.classes, [0, 1])
        np.testing.assert_array_equal(protos.domains, [1, 0])
        np.testing.assert_allclose(protos.protos, [[0.9, 0.1], [0.3, 0.7]])
        np.testing.assert_allclose(protos.protos.sum(axis=1), 1.0)

    def test_single_domain_class_is_skipped(self):
        protos = PrototypeSet(classes=[0, 0, 1], domains=[0, 1, 0], protos=[[0.8, 0.2], [0.7, 0.3], [0.1, 0.9]])
        assert prototype_alignment_loss(protos).per_anchor[2] == 0.0

    def test_degenerate_set(self):
        with pytest.raises(NumericalError, match="degenerate prototype set"):
            prototype_alignment_loss(PrototypeSet(classes=[0], domains=[0], protos=[[0.5, 0.5]]))


class TestTotalLoss:
    def test_weighted_sum(self):
        assert total_loss(LossValue(value=1.0), LossValue(value=2.0), LossValue(value=3.0), 0.1, 0.01).value == pytest.approx(1.23)

    def test_zero_weights_reproduce_cross_entropy_bitwise(self, rng):
        grads = rng.normal(size=(4, 3))
        ce = LossValue(value=0.7312, grads=grads)
        con = LossValue(value=5.0, grads=rng.normal(size=(4, 3)))
        total = total_loss(ce, con, LossValue.zero((4, 3)), 0.0, 0.0)
        assert total.value == ce.value
        np.testing.assert_array_equal(total.grads, grads)

    def test_gradients_combine_linearly(self, rng):
        parts = [LossValue(value=1.0, grads=rng.normal(size=(3, 2))) for _ in range(3)]
        total = total_loss(*parts, alpha=0.5, beta=2.0)
        np.testing.assert_allclose(total.grads, parts[0].grads + 0.5 * parts[1].grads + 2.0 * parts[2].grads)

    @pytest.mark.parametrize("alpha,beta", [(1e-3, 1e-3), (1e2, 1e2), (0.1, 0.01)])
    def test_effective_range_accepted(self, alpha, beta):
        assert total_loss(LossValue(value=1.0), LossValue(value=1.0), LossValue(value=1.0), alpha, beta).value > 0

    def test_negative_trade_off(self):
        with pytest.raises(InvalidParameterError, match="invalid trade-off"):
            total_loss(LossValue(value=1.0), LossValue(value=1.0), LossValue(value=1.0), -0.1, 0.0)
