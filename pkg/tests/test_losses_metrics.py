"""Tests for the segmentation losses and the dataset metrics."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcfnet.errors import ConfigError, DomainError, ShapeError
from hcfnet.losses import bce_loss, deep_supervision_loss, soft_iou_loss
from hcfnet.metrics import iou_metric, niou_metric
from hcfnet.tensor import Tensor, backward

from reference import bce_naive, iou_naive, niou_naive, soft_iou_naive


def rng(seed):
    return np.random.default_rng(seed)


def random_pair(seed, shape=(2, 1, 4, 4)):
    g = rng(seed)
    logits = g.normal(size=shape) * 3.0
    target = (g.uniform(size=shape) > 0.5).astype(np.float64)
    return logits, target


class TestBceLoss:
    def test_zero_logits_cost_ln2(self):
        y = (rng(0).uniform(size=(1, 1, 3, 3)) > 0.5).astype(np.float64)
        loss = bce_loss(Tensor(np.zeros((1, 1, 3, 3))), Tensor(y))
        np.testing.assert_allclose(loss.data, np.log(2.0), atol=1e-12)

    def test_confident_correct_is_tiny(self):
        loss = bce_loss(Tensor(np.full((1, 1, 2, 2), 50.0)), Tensor(np.ones((1, 1, 2, 2))))
        assert loss.data.item() < 1e-20

    def test_extreme_logits_stay_finite(self):
        y = np.zeros((1, 1, 2, 2))
        y[0, 0, 0, 0] = 1.0
        loss = bce_loss(Tensor(np.array([[[[500.0, -500.0], [500.0, -500.0]]]])), Tensor(y))
        assert np.isfinite(loss.data.item())

    def test_matches_naive_formula(self):
        logits, target = random_pair(1)
        loss = bce_loss(Tensor(logits), Tensor(target))
        np.testing.assert_allclose(loss.data, bce_naive(logits, target), atol=1e-12)

    def test_nonbinary_target_rejected(self):
        with pytest.raises(DomainError):
            bce_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.full((1, 1, 2, 2), 0.5)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))

    @given(st.integers(0, 10_000))
    def test_nonnegative(self, seed):
        logits, target = random_pair(seed)
        assert bce_loss(Tensor(logits), Tensor(target)).data.item() >= 0.0


class TestSoftIouLoss:
    def test_perfect_overlap_is_tiny(self):
        y = (rng(2).uniform(size=(1, 1, 4, 4)) > 0.5).astype(np.float64)
        logits = np.where(y > 0.5, 50.0, -50.0)
        assert soft_iou_loss(Tensor(logits), Tensor(y)).data.item() < 1e-5

    def test_empty_mask_guard(self):
        logits = np.full((1, 1, 4, 4), -50.0)
        loss = soft_iou_loss(Tensor(logits), Tensor(np.zeros((1, 1, 4, 4))))
        assert abs(loss.data.item()) < 1e-5

    def test_hand_case_half(self):
        # 2x2 with y = [1,1,0,0] and p = [1,0,0,0]: intersection 1, union 2.
        logits = np.array([[[[500.0, -500.0], [-500.0, -500.0]]]])
        target = np.array([[[[1.0, 1.0], [0.0, 0.0]]]])
        loss = soft_iou_loss(Tensor(logits), Tensor(target))
        np.testing.assert_allclose(loss.data.item(), 0.5, atol=1e-6)

    def test_matches_naive_formula(self):
        logits, target = random_pair(3, shape=(3, 1, 4, 4))
        loss = soft_iou_loss(Tensor(logits), Tensor(target))
        np.testing.assert_allclose(loss.data, soft_iou_naive(logits, target), atol=1e-12)

    def test_per_image_averaging(self):
        # Batch loss equals the mean of single-image losses.
        logits, target = random_pair(4, shape=(3, 1, 4, 4))
        whole = soft_iou_loss(Tensor(logits), Tensor(target)).data.item()
        singles = [
            soft_iou_loss(Tensor(logits[i : i + 1]), Tensor(target[i : i + 1])).data.item()
            for i in range(3)
        ]
        np.testing.assert_allclose(whole, np.mean(singles), atol=1e-12)

    @given(st.integers(0, 10_000))
    def test_bounded_unit_interval(self, seed):
        logits, target = random_pair(seed)
        loss = soft_iou_loss(Tensor(logits), Tensor(target)).data.item()
        assert -1e-12 <= loss <= 1.0 + 1e-12


class TestDeepSupervisionLoss:
    WEIGHTS = (1.0, 0.5, 0.25, 0.125, 0.0625)

    def test_identical_logits_scale_by_weight_sum(self):
        logits, target = random_pair(5)
        stack = [Tensor(logits.copy()) for _ in range(5)]
        total = deep_supervision_loss(stack, Tensor(target), self.WEIGHTS)
        single = bce_loss(Tensor(logits), Tensor(target)).data + soft_iou_loss(
            Tensor(logits), Tensor(target)
        ).data
        np.testing.assert_allclose(total.data, 1.9375 * single, atol=1e-12)

    def test_weight_sum_is_fixed(self):
        assert sum(self.WEIGHTS) == 1.9375

    def test_single_scale_weights(self):
        logits, target = random_pair(6)
        total = deep_supervision_loss([Tensor(logits)], Tensor(target), [1.0])
        single = bce_loss(Tensor(logits), Tensor(target)).data + soft_iou_loss(
            Tensor(logits), Tensor(target)
        ).data
        np.testing.assert_allclose(total.data, single, atol=1e-12)

    def test_length_mismatch_rejected(self):
        logits, target = random_pair(7)
        with pytest.raises(ConfigError):
            deep_supervision_loss([Tensor(logits)], Tensor(target), self.WEIGHTS)
        with pytest.raises(ConfigError):
            deep_supervision_loss([], Tensor(target), [])

    def test_gradient_reaches_every_scale(self):
        logits, target = random_pair(8)
        scales = [Tensor(logits + i, requires_grad=True) for i in range(3)]
        backward(deep_supervision_loss(scales, Tensor(target), [1.0, 0.5, 0.25]))
        for t in scales:
            assert t.grad is not None and np.abs(t.grad).max() > 0

    @given(st.integers(0, 10_000))
    def test_nonnegative(self, seed):
        logits, target = random_pair(seed)
        stack = [Tensor(logits), Tensor(logits * 0.5)]
        loss = deep_supervision_loss(stack, Tensor(target), [1.0, 0.5]).data.item()
        assert loss >= 0.0


def random_masks(seed, n=4, shape=(8, 8)):
    g = rng(seed)
    preds = [g.uniform(size=shape) for _ in range(n)]
    gts = [(g.uniform(size=shape) > 0.7).astype(np.float64) for _ in range(n)]
    return preds, gts


class TestIouMetric:
    def test_perfect_prediction(self):
        _, gts = random_masks(10)
        preds = [gt.astype(np.float64) for gt in gts]
        assert iou_metric(preds, gts) == 1.0

    def test_disjoint_prediction(self):
        gt = np.zeros((4, 4))
        gt[0, 0] = 1.0
        pred = np.zeros((4, 4))
        pred[3, 3] = 1.0
        assert iou_metric([pred], [gt]) == 0.0

    def test_matches_pixel_loop(self):
        preds, gts = random_masks(11)
        np.testing.assert_allclose(iou_metric(preds, gts), iou_naive(preds, gts), atol=1e-12)

    def test_empty_everything_is_one(self):
        assert iou_metric([np.zeros((3, 3))], [np.zeros((3, 3))]) == 1.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(DomainError):
            iou_metric([], [])

    def test_nonbinary_mask_rejected(self):
        with pytest.raises(DomainError):
            iou_metric([np.zeros((2, 2))], [np.full((2, 2), 0.5)])


class TestNiouMetric:
    def test_single_image_equals_iou(self):
        preds, gts = random_masks(12, n=1)
        assert niou_metric(preds, gts) == iou_metric(preds, gts)

    def test_mean_of_per_image_scores(self):
        gt = np.zeros((4, 4))
        gt[0, 0] = 1.0
        perfect = gt.astype(np.float64)
        disjoint = np.zeros((4, 4))
        disjoint[3, 3] = 1.0
        assert niou_metric([perfect, disjoint], [gt, gt]) == 0.5

    def test_matches_pixel_loop(self):
        preds, gts = random_masks(13)
        np.testing.assert_allclose(niou_metric(preds, gts), niou_naive(preds, gts), atol=1e-12)

    @given(st.integers(0, 10_000))
    def test_oracle_agreement_random(self, seed):
        preds, gts = random_masks(seed, n=3, shape=(5, 5))
        np.testing.assert_allclose(iou_metric(preds, gts), iou_naive(preds, gts), atol=1e-12)
        np.testing.assert_allclose(niou_metric(preds, gts), niou_naive(preds, gts), atol=1e-12)

    def test_count_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            niou_metric([np.zeros((2, 2))], [np.zeros((2, 2)), np.zeros((2, 2))])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            niou_metric([np.zeros((2, 2))], [np.zeros((2, 3))])
