import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import messkit as mk
from messkit import errors
from messkit.losses import cross_entropy, kl_divergence, pfd_loss, pretrain_loss
from conftest import one_hot_tensor, random_softmax


def _pixel(probs):
    return mk.PredictionTensor(np.array(probs, dtype=np.float32).reshape(-1, 1, 1))


def _gt(value=0):
    return mk.LabelMap(np.array([[value]], dtype=np.uint16))


class TestCrossEntropy:
    def test_one_hot_correct_is_zero(self, rng):
        labels = rng.integers(0, 4, size=(5, 5))
        pred = one_hot_tensor(labels, 4)
        gt = mk.LabelMap(labels.astype(np.uint16))
        assert cross_entropy(pred, gt) == 0.0

    def test_single_pixel_half(self):
        assert cross_entropy(_pixel([0.5, 0.5]), _gt(0)) == pytest.approx(
            math.log(2), abs=1e-9)

    def test_masked_mean(self):
        # per-pixel losses (ln 2, ln 4); the mask keeps only the first
        pred = mk.PredictionTensor(
            np.array([[[0.5, 0.25]], [[0.5, 0.75]]], dtype=np.float32))
        gt = mk.LabelMap(np.zeros((1, 2), dtype=np.uint16))
        full = cross_entropy(pred, gt)
        assert full == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-6)
        masked = cross_entropy(pred, gt, pixel_mask=np.array([[1, 0]]))
        assert masked == pytest.approx(math.log(2), abs=1e-6)

    def test_ignored_pixels_excluded(self):
        pred = mk.PredictionTensor(
            np.array([[[0.5, 0.25]], [[0.5, 0.75]]], dtype=np.float32))
        gt = mk.LabelMap(np.array([[0, 65535]], dtype=np.uint16))
        assert cross_entropy(pred, gt) == pytest.approx(math.log(2), abs=1e-6)

    def test_empty_selection(self):
        gt = mk.LabelMap(np.array([[65535]], dtype=np.uint16))
        with pytest.raises(errors.EmptySelection):
            cross_entropy(_pixel([1.0, 0.0]), gt)

    def test_zero_probability_clamped(self):
        # exact zero at the gt class: finite value via the 1e-12 clamp
        value = cross_entropy(_pixel([0.0, 1.0]), _gt(0))
        assert value == pytest.approx(-math.log(1e-12))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_non_negative(self, seed):
        g = np.random.default_rng(seed)
        pred = random_softmax(g, 3, 4, 4)
        gt = mk.LabelMap(g.integers(0, 3, size=(4, 4)).astype(np.uint16))
        assert cross_entropy(pred, gt) >= 0.0


class TestKlDivergence:
    def test_identical_is_zero(self, rng):
        p = random_softmax(rng, 4, 3, 3)
        assert kl_divergence(p, p) == 0.0

    def test_one_hot_teacher(self):
        teacher = _pixel([1.0, 0.0])
        student = _pixel([0.5, 0.5])
        assert kl_divergence(student, teacher) == pytest.approx(math.log(2), abs=1e-6)

    def test_scalar_example(self):
        teacher = _pixel([0.75, 0.25])
        student = _pixel([0.5, 0.5])
        expected = 0.75 * math.log(0.75 / 0.5) + 0.25 * math.log(0.25 / 0.5)
        assert kl_divergence(student, teacher) == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(0.130812, abs=1e-6)

    def test_reverse_direction(self):
        teacher = _pixel([0.75, 0.25])
        student = _pixel([0.5, 0.5])
        expected = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
        assert kl_divergence(student, teacher, reverse=True) == pytest.approx(
            expected, abs=1e-6)

    def test_dim_mismatch(self, rng):
        with pytest.raises(errors.DimMismatch):
            kl_divergence(random_softmax(rng, 2, 2, 2), random_softmax(rng, 2, 3, 3))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_non_negative(self, seed):
        g = np.random.default_rng(seed)
        s = random_softmax(g, 3, 3, 3)
        t = random_softmax(g, 3, 3, 3)
        assert kl_divergence(s, t) >= -1e-9


class TestPretrainLoss:
    def _preds(self, rng, n, m=3, size=3):
        return [random_softmax(rng, m, size, size) for _ in range(n)]

    def _gt(self, rng, m=3, size=3):
        return mk.LabelMap(rng.integers(0, m, size=(size, size)).astype(np.uint16))

    @pytest.mark.parametrize("j,expected", [(1, (1, 6)), (6, (1, 2, 3, 6)), (7, (1, 6))])
    def test_active_sets(self, rng, j, expected):
        report = pretrain_loss(self._preds(rng, 6), self._gt(rng), j)
        assert report.active_exit_set == expected

    def test_total_is_sum_of_terms(self, rng):
        report = pretrain_loss(self._preds(rng, 4), self._gt(rng), 6)
        assert report.total == pytest.approx(
            sum(ce + kl for _, ce, kl in report.per_exit_terms), abs=1e-9)

    def test_round_robin_cycles(self, rng):
        preds, gt = self._preds(rng, 4), self._gt(rng)
        actives = [pretrain_loss(preds, gt, j, round_robin=True).active_exit_set
                   for j in (1, 2, 3, 4)]
        assert actives == [(1, 4), (2, 4), (3, 4), (1, 4)]

    @settings(max_examples=25, deadline=None)
    @given(j=st.integers(1, 40), n=st.integers(2, 7), seed=st.integers(0, 2**20))
    def test_always_contains_first_and_final(self, j, n, seed):
        g = np.random.default_rng(seed)
        report = pretrain_loss(self._preds(g, n), self._gt(g), j)
        assert 1 in report.active_exit_set and n in report.active_exit_set

    def test_invalid_inputs(self, rng):
        with pytest.raises(ValueError):
            pretrain_loss(self._preds(rng, 1), self._gt(rng), 1)
        with pytest.raises(ValueError):
            pretrain_loss(self._preds(rng, 3), self._gt(rng), 0)


class TestPfdLoss:
    def test_all_wrong_final_alpha_one(self, rng):
        # final exit confidently wrong everywhere: the filter empties every CE
        labels = np.zeros((3, 3), dtype=np.int64)
        wrong = one_hot_tensor(labels + 1, 3)
        early = random_softmax(rng, 3, 3, 3)
        gt = mk.LabelMap(labels.astype(np.uint16))
        report = pfd_loss([early, wrong], gt, alpha=1.0)
        assert report.total == pytest.approx(0.0, abs=1e-9)

    def test_alpha_zero_is_pure_distillation(self, rng):
        preds = [random_softmax(rng, 3, 4, 4) for _ in range(3)]
        gt = mk.LabelMap(rng.integers(0, 3, size=(4, 4)).astype(np.uint16))
        report = pfd_loss(preds, gt, alpha=0.0)
        expected = sum(kl_divergence(p, preds[-1]) for p in preds)
        assert report.total == pytest.approx(expected, abs=1e-9)

    def test_single_pixel_derived(self):
        # independent scalar computation: gt=0, final (0.9, 0.1) correct,
        # early (0.6, 0.4), alpha = 0.5
        early = _pixel([0.6, 0.4])
        final = _pixel([0.9, 0.1])
        gt = _gt(0)
        kl = 0.9 * math.log(0.9 / 0.6) + 0.1 * math.log(0.1 / 0.4)
        early_term = 0.5 * (-math.log(0.6)) + 0.5 * kl
        report = pfd_loss([early, final], gt, alpha=0.5, include_final=False)
        assert report.total == pytest.approx(early_term, abs=1e-6)
        assert report.active_exit_set == (1,)
        # as printed, the sum runs through the final exit; its KL term is zero
        final_term = 0.5 * (-math.log(0.9))
        full = pfd_loss([early, final], gt, alpha=0.5)
        assert full.total == pytest.approx(early_term + final_term, abs=1e-6)
        assert full.active_exit_set == (1, 2)

    def test_final_kl_term_is_zero(self, rng):
        preds = [random_softmax(rng, 3, 3, 3) for _ in range(3)]
        gt = mk.LabelMap(rng.integers(0, 3, size=(3, 3)).astype(np.uint16))
        report = pfd_loss(preds, gt, alpha=0.3)
        assert report.per_exit_terms[-1][2] == 0.0

    def test_alpha_interpolates_linearly(self, rng):
        preds = [random_softmax(rng, 3, 4, 4) for _ in range(3)]
        gt = mk.LabelMap(rng.integers(0, 3, size=(4, 4)).astype(np.uint16))
        t0 = pfd_loss(preds, gt, alpha=0.0).total
        t1 = pfd_loss(preds, gt, alpha=1.0).total
        for alpha in (0.25, 0.5, 0.75):
            expected = (1 - alpha) * t0 + alpha * t1
            assert pfd_loss(preds, gt, alpha=alpha).total == pytest.approx(
                expected, abs=1e-9)

    def test_alpha_validated(self, rng):
        preds = [random_softmax(rng, 2, 2, 2) for _ in range(2)]
        gt = mk.LabelMap(np.zeros((2, 2), dtype=np.uint16))
        with pytest.raises(ValueError):
            pfd_loss(preds, gt, alpha=1.5)
