"""Loss-stack tests against straight-line scalar re-computations."""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infosieve import autodiff as ad
from infosieve.losses import (LossParts, LossWeights, info_nce_sup,
                              info_nce_unsup, loss_c_code, loss_c_in, loss_cat,
                              loss_code_cond, loss_final, loss_length,
                              loss_mask_cond)


# --- independent scalar oracles -------------------------------------------

def nce_unsup_oracle(v1, v2, tau, smoothing=0.0):
    b = len(v1)
    total = 0.0
    for anchors, cands in ((v1, v2), (v2, v1)):
        for i in range(b):
            scores = [-np.linalg.norm(anchors[i] - cands[j]) / tau for j in range(b)]
            lse = math.log(sum(math.exp(s) for s in scores))
            for j in range(b):
                t = (1 - smoothing) * (1.0 if j == i else 0.0) + smoothing / b
                total += t * (lse - scores[j])
    return total / (2 * b)


def nce_sup_oracle(emb, labels, tau, smoothing=0.0):
    b = len(emb)
    anchors = [i for i in range(b)
               if any(labels[j] == labels[i] and j != i for j in range(b))]
    if not anchors:
        return 0.0
    total = 0.0
    for i in anchors:
        scores = [-np.linalg.norm(emb[i] - emb[j]) / tau for j in range(b)]
        lse = math.log(sum(math.exp(s) for s in scores))
        pos = [j for j in range(b) if j != i and labels[j] == labels[i]]
        for j in range(b):
            t = (1 - smoothing) * (1.0 / len(pos) if j in pos else 0.0) + smoothing / b
            total += t * (lse - scores[j])
    return total / len(anchors)


def length_oracle(masks, base, p):
    total = 0.0
    for row in np.atleast_2d(masks):
        s = 0.0
        for k, m in enumerate(row, start=1):
            s += (m * base**k) ** p
        total += s ** (1.0 / p)
    return total / len(np.atleast_2d(masks))


def cond_oracle(values):
    total = 0.0
    for v in np.asarray(values).ravel():
        total += v * v * (1 - v) * (1 - v)
    return total


# --- unsupervised InfoNCE --------------------------------------------------

class TestUnsupInfoNCE:
    def test_perfect_positives_far_negatives(self):
        v = np.array([[0.0], [100.0], [200.0], [300.0]])
        loss = info_nce_unsup(v, v.copy(), tau=1.0)
        assert float(loss.data) == pytest.approx(0.0, abs=1e-8)

    def test_identical_batch_gives_log_b(self):
        for b in (2, 3, 7):
            v = np.ones((b, 4))
            loss = info_nce_unsup(v, v.copy(), tau=0.3)
            assert float(loss.data) == pytest.approx(math.log(b), abs=1e-12)

    def test_three_scalar_embeddings_match_oracle(self):
        v = np.array([[0.0], [0.1], [5.0]])
        loss = info_nce_unsup(v, v.copy(), tau=1.0)
        assert float(loss.data) == pytest.approx(nce_unsup_oracle(v, v, 1.0), abs=1e-12)

    def test_random_batches_match_oracle_with_smoothing(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v1 = rng.normal(size=(5, 3))
            v2 = rng.normal(size=(5, 3))
            got = float(info_nce_unsup(v1, v2, tau=0.5, smoothing=0.2).data)
            assert got == pytest.approx(nce_unsup_oracle(v1, v2, 0.5, 0.2), abs=1e-10)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            info_nce_unsup(np.ones((1, 3)), np.ones((1, 3)), tau=1.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        v1, v2 = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        a = float(info_nce_unsup(v1, v2, tau=0.2).data)
        b = float(info_nce_unsup(v1[perm], v2[perm], tau=0.2).data)
        assert a == pytest.approx(b, abs=1e-12)


# --- supervised InfoNCE -----------------------------------------------------

class TestSupInfoNCE:
    def test_identical_same_label_equals_unsup_identical_value(self):
        for b in (2, 4, 6):
            emb = np.full((b, 3), 0.7)
            sup = float(info_nce_sup(emb, np.zeros(b, dtype=int), tau=0.5).data)
            unsup = float(info_nce_unsup(emb, emb.copy(), tau=0.5).data)
            assert sup == pytest.approx(unsup, abs=1e-12)
            assert sup == pytest.approx(math.log(b), abs=1e-12)

    def test_two_separated_clusters_approach_log_cluster_size(self):
        losses = []
        for gap in (1.0, 2.0, 5.0, 50.0):
            emb = np.array([[0.0], [0.0], [gap], [gap]])
            losses.append(float(info_nce_sup(emb, [0, 0, 1, 1], tau=1.0).data))
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert losses[-1] == pytest.approx(math.log(2.0), abs=1e-6)

    def test_singleton_labels_give_zero_and_flag(self, caplog):
        emb = np.random.default_rng(0).normal(size=(3, 2))
        with caplog.at_level(logging.WARNING, logger="infosieve.losses"):
            loss = info_nce_sup(emb, [0, 1, 2], tau=1.0)
        assert float(loss.data) == 0.0
        assert any("vacuous" in rec.message for rec in caplog.records)

    def test_random_batches_match_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            emb = rng.normal(size=(6, 3))
            labels = rng.integers(0, 3, size=6)
            got = float(info_nce_sup(emb, labels, tau=0.4, smoothing=0.1).data)
            assert got == pytest.approx(nce_sup_oracle(emb, labels, 0.4, 0.1), abs=1e-10)

    def test_negative_labels_never_pair(self):
        emb = np.random.default_rng(3).normal(size=(4, 2))
        loss_a = float(info_nce_sup(emb, np.array([0, 0, -1, -1]), tau=1.0).data)
        loss_b = float(info_nce_sup(emb, np.array([0, 0, -1, -2]), tau=1.0).data)
        assert loss_a == pytest.approx(loss_b, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(12)
        emb = rng.normal(size=(7, 3))
        labels = np.array([0, 0, 1, 1, 1, 2, 2])
        perm = rng.permutation(7)
        a = float(info_nce_sup(emb, labels, tau=0.3).data)
        b = float(info_nce_sup(emb[perm], labels[perm], tau=0.3).data)
        assert a == pytest.approx(b, abs=1e-12)


# --- mixtures ---------------------------------------------------------------

class TestMixtures:
    def _views(self, seed=0):
        rng = np.random.default_rng(seed)
        return rng.normal(size=(6, 4)), rng.normal(size=(6, 4)), \
            np.array([0, 1, 0, -1, -1, 1])

    def test_lambda_zero_is_pure_unsup(self):
        v1, v2, labels = self._views()
        w = LossWeights(lambda_in=0.0)
        mixed = loss_c_in(v1, v2, labels, w)
        assert float(mixed.total.data) == float(info_nce_unsup(v1, v2, w.tau).data)

    def test_lambda_one_is_pure_sup(self):
        v1, v2, labels = self._views()
        w = LossWeights(lambda_in=1.0)
        mixed = loss_c_in(v1, v2, labels, w)
        assert float(mixed.total.data) == float(mixed.sup.data)
        assert float(mixed.unsup.data) == 0.0

    def test_recombination_exact(self):
        v1, v2, labels = self._views(1)
        for lam in (0.35, 0.5, 0.8):
            w = LossWeights(lambda_in=lam)
            mixed = loss_c_in(v1, v2, labels, w)
            expect = (1 - lam) * float(mixed.unsup.data) + lam * float(mixed.sup.data)
            assert float(mixed.total.data) == pytest.approx(expect, abs=1e-15)

    def test_code_mixture_pure_unsup_at_zero(self):
        rng = np.random.default_rng(4)
        bits1, bits2 = rng.uniform(0, 1, (5, 6)), rng.uniform(0, 1, (5, 6))
        w = LossWeights(lambda_code=0.0)
        mixed = loss_c_code(bits1, bits2, rng.normal(size=(5, 6)), rng.integers(0, 2, 5), w)
        assert float(mixed.total.data) == float(info_nce_unsup(bits1, bits2, w.tau).data)

    def test_perfect_pseudo_labels_equal_fully_supervised(self):
        rng = np.random.default_rng(5)
        bits1, bits2 = rng.uniform(0, 1, (6, 4)), rng.uniform(0, 1, (6, 4))
        trunc = rng.normal(size=(6, 4))
        truth = np.array([0, 0, 1, 1, 2, 2])
        w = LossWeights(lambda_code=0.35)
        with_pseudo = loss_c_code(bits1, bits2, trunc, truth.copy(), w)
        fully_sup = info_nce_sup(trunc, truth, w.tau, w.smoothing)
        assert float(with_pseudo.sup.data) == float(fully_sup.data)

    def test_code_recombination_default(self):
        rng = np.random.default_rng(6)
        bits1, bits2 = rng.uniform(0, 1, (5, 4)), rng.uniform(0, 1, (5, 4))
        trunc, labels = rng.normal(size=(5, 4)), np.array([0, 0, 1, 1, 0])
        w = LossWeights()  # lambda_code = 0.35 per published defaults
        assert w.lambda_code == 0.35
        mixed = loss_c_code(bits1, bits2, trunc, labels, w)
        expect = 0.65 * float(mixed.unsup.data) + 0.35 * float(mixed.sup.data)
        assert float(mixed.total.data) == pytest.approx(expect, abs=1e-15)


# --- length and binarity ----------------------------------------------------

class TestLength:
    def test_zero_mask(self):
        assert float(loss_length(np.zeros((3, 5)), base=2.0, p=1.0).data) == 0.0

    def test_single_mask_example(self):
        v = float(loss_length(np.array([1.0, 1.0, 0.0, 0.0]), base=2.0, p=1.0).data)
        assert v == pytest.approx(6.0, abs=1e-12)

    def test_rightmost_bit_dominates_left_run(self):
        lone = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
        run = np.array([1.0, 1.0, 1.0, 1.0, 0.0])
        lone_v = float(loss_length(lone, base=2.0, p=1.0).data)
        run_v = float(loss_length(run, base=2.0, p=1.0).data)
        assert lone_v == pytest.approx(32.0) and run_v == pytest.approx(30.0)
        assert lone_v > run_v

    def test_matches_oracle_for_general_p(self):
        rng = np.random.default_rng(7)
        for p in (1.0, 1.5, 2.0, 3.0):
            m = rng.uniform(0, 1, size=(4, 6))
            got = float(loss_length(m, base=1.7, p=p).data)
            assert got == pytest.approx(length_oracle(m, 1.7, p), abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 5), st.integers(0, 2**6 - 1))
    def test_adding_a_one_never_decreases(self, pos, pattern):
        base_mask = np.array([(pattern >> k) & 1 for k in range(6)], dtype=float)
        if base_mask[pos] == 1.0:
            return
        grown = base_mask.copy()
        grown[pos] = 1.0
        for p in (1.0, 2.0):
            lo = float(loss_length(base_mask, 2.0, p).data)
            hi = float(loss_length(grown, 2.0, p).data)
            assert hi >= lo

    def test_p_below_one_rejected(self):
        with pytest.raises(ValueError):
            loss_length(np.ones(3), 2.0, p=0.5)


class TestBinaryConditions:
    def test_exact_binary_is_zero(self):
        assert float(loss_code_cond(np.array([0.0, 1.0, 1.0, 0.0])).data) == 0.0
        assert float(loss_mask_cond(np.eye(3).ravel()).data) == 0.0

    def test_all_half_single_sample(self):
        L = 8
        v = float(loss_code_cond(np.full((1, L), 0.5)).data)
        assert v == pytest.approx(L / 16.0, abs=1e-12)

    def test_point_nine_per_entry(self):
        v = float(loss_mask_cond(np.array([0.9])).data)
        assert v == pytest.approx(0.81 * 0.01, abs=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(8)
        vals = rng.uniform(0, 1, size=(5, 7))
        assert float(loss_code_cond(vals).data) == pytest.approx(cond_oracle(vals), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=8))
    def test_strictly_positive_off_binary(self, vals):
        arr = np.array(vals)
        if np.all((arr == 0) | (arr == 1)):
            return
        assert float(loss_code_cond(arr).data) > 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            loss_code_cond(np.array([1.2]))


# --- classifier -------------------------------------------------------------

class TestLossCat:
    def test_confident_correct_logits_approach_zero(self):
        logits = 50.0 * np.eye(3)
        assert float(loss_cat(logits, [0, 1, 2]).data) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_logits_give_log_c(self):
        for c in (2, 5, 9):
            logits = np.zeros((4, c))
            assert float(loss_cat(logits, [0] * 4).data) == pytest.approx(math.log(c), abs=1e-12)

    def test_three_class_hand_example(self):
        logits = np.array([[2.0, 0.0, -1.0]])
        expect = -2.0 + math.log(math.exp(2) + math.exp(0) + math.exp(-1))
        assert float(loss_cat(logits, [0]).data) == pytest.approx(expect, abs=1e-12)

    def test_unlabeled_sample_rejected(self):
        with pytest.raises(ValueError, match="non-class"):
            loss_cat(np.zeros((2, 3)), [0, -1])


# --- final mixture ----------------------------------------------------------

class TestLossFinal:
    def test_all_zero_parts(self):
        bd = loss_final(LossParts(), LossWeights())
        assert bd.total == 0.0

    def test_default_arithmetic(self):
        parts = LossParts(c_in_u=1.0, c_in_s=1.0, c_code_u=1.0, c_code_s=1.0,
                          length=1.0, cat=1.0, code_cond=1.0, mask_cond=1.0)
        bd = loss_final(parts, LossWeights())
        assert bd.total == pytest.approx(2.13, abs=1e-9)

    def test_zero_gamma_removes_cat_term(self):
        parts = LossParts(cat=123.0, length=1.0)
        w = LossWeights(gamma=0.0)
        bd = loss_final(parts, w)
        assert bd.total == pytest.approx(w.delta * 1.0, abs=1e-15)
        assert bd.cat == 123.0  # still reported, just unweighted

    def test_breakdown_reproduces_combination(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            vals = rng.uniform(0, 3, size=8)
            parts = LossParts(*[float(v) for v in vals])
            w = LossWeights()
            bd = loss_final(parts, w)
            expect = (
                w.alpha * ((1 - w.lambda_in) * vals[0] + w.lambda_in * vals[1])
                + w.beta * ((1 - w.lambda_code) * vals[2] + w.lambda_code * vals[3])
                + w.delta * vals[4] + w.gamma * vals[5]
                + w.zeta * vals[6] + w.mu * vals[7]
            )
            assert bd.total == pytest.approx(expect, abs=1e-9)

    def test_non_finite_part_names_offender(self):
        with pytest.raises(FloatingPointError, match="mask_cond"):
            loss_final(LossParts(mask_cond=float("nan")), LossWeights())

    def test_gradient_flows_through_total(self):
        t = ad.Tensor(np.array(2.0))
        parts = LossParts(length=t)
        bd = loss_final(parts, LossWeights(delta=0.5))
        ad.backward(bd.node)
        assert t.grad == pytest.approx(0.5)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_in=1.5)
    with pytest.raises(ValueError):
        LossWeights(tau=0.0)
    with pytest.raises(ValueError):
        LossWeights(p=0.5)
    with pytest.raises(ValueError):
        LossWeights(alpha=float("inf"))
