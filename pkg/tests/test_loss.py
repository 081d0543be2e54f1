import math

import numpy as np
import pytest

from sidert.loss import EmptyMaskError, LossConfig, downsample_gt, mss_loss, silog_sqrt_loss, stage_losses
from sidert.nn import ConfigError
from sidert.tensor import DomainError, Tensor


def silog_oracle(pred, gt, mask, lam):
    d = [math.log(p) - math.log(g) for p, g, m in zip(pred.ravel(), gt.ravel(), mask.ravel()) if m]
    n = len(d)
    return math.sqrt(max(sum(x * x for x in d) / n - lam * (sum(d) / n) ** 2, 0.0) + 1e-14)


def test_perfect_fit_is_zero():
    gt = np.random.default_rng(0).uniform(1, 5, size=(1, 4, 4))
    assert silog_sqrt_loss(Tensor(gt), gt, np.ones_like(gt)).item() < 1e-6


def test_single_pixel_e_ratio():
    loss = silog_sqrt_loss(Tensor([[[math.e * 2.0]]]), np.array([[[2.0]]]), np.ones((1, 1, 1)), 0.85)
    assert loss.item() == pytest.approx(math.sqrt(0.15), abs=1e-9)


def test_two_pixels_opposite_log_errors():
    gt = np.array([[[1.0, 1.0]]])
    loss = silog_sqrt_loss(Tensor([[[math.e, 1 / math.e]]]), gt, np.ones_like(gt), 0.85)
    assert loss.item() == pytest.approx(1.0, abs=1e-9)


def test_matches_scalar_oracle_with_mask():
    rng = np.random.default_rng(1)
    pred, gt = rng.uniform(0.5, 8, size=(1, 6, 6)), rng.uniform(0.5, 8, size=(1, 6, 6))
    mask = (rng.uniform(size=(1, 6, 6)) > 0.3).astype(float)
    gt[mask == 0] = 0.0  # invalid pixels may hold any value
    assert silog_sqrt_loss(Tensor(pred), gt, mask, 0.85).item() == pytest.approx(silog_oracle(pred, gt, mask, 0.85), abs=1e-12)


def test_scale_invariance_at_lambda_one():
    rng = np.random.default_rng(2)
    pred, gt = rng.uniform(1, 5, size=(1, 5, 5)), rng.uniform(1, 5, size=(1, 5, 5))
    base = silog_sqrt_loss(Tensor(pred), gt, np.ones_like(gt), 1.0).item()
    for c in (0.5, 2.0, 10.0):
        assert abs(silog_sqrt_loss(Tensor(c * pred), gt, np.ones_like(gt), 1.0).item() - base) < 1e-12


def test_errors():
    with pytest.raises(EmptyMaskError):
        silog_sqrt_loss(Tensor(np.ones((1, 2, 2))), np.ones((1, 2, 2)), np.zeros((1, 2, 2)))
    gt = np.ones((1, 2, 2))
    gt[0, 1, 0] = -1.0
    with pytest.raises(DomainError) as info:
        silog_sqrt_loss(Tensor(np.ones((1, 2, 2))), gt, np.ones((1, 2, 2)))
    assert info.value.index == (0, 1, 0)
    with pytest.raises(ValueError):
        silog_sqrt_loss(Tensor(np.ones((1, 2, 2))), np.ones((1, 2, 3)), np.ones((1, 2, 3)))


def test_downsample_examples():
    g, m = downsample_gt(np.full((1, 4, 4), 3.0), np.ones((1, 4, 4)), 2, 2)
    np.testing.assert_array_equal(g, 3.0)
    np.testing.assert_array_equal(m, 1.0)
    gt = np.array([[[2.0, 9.0], [4.0, 9.0]]])
    mask = np.array([[[1, 0], [1, 0]]])
    g, m = downsample_gt(gt, mask, 1, 1)
    assert g[0, 0, 0] == 3.0 and m[0, 0, 0] == 1.0
    g, m = downsample_gt(gt, np.zeros((1, 2, 2)), 1, 1)
    assert m[0, 0, 0] == 0.0 and g[0, 0, 0] == 1.0


def pyramid(gt_full, rng, noise=0.2):
    preds = []
    for s in (16, 8, 4, 2, 1):
        h, w = gt_full.shape[1] // s, gt_full.shape[2] // s
        preds.append(Tensor(rng.uniform(1 - noise, 1 + noise, size=(1, h, w)) * 2.0))
    return preds


def test_mss_final_stage_only():
    rng = np.random.default_rng(3)
    gt = rng.uniform(1, 4, size=(1, 32, 32))
    mask = np.ones_like(gt)
    preds = pyramid(gt, rng)
    cfg = LossConfig(stage_weights=(0, 0, 0, 0, 1))
    assert mss_loss(preds, gt, mask, cfg).item() == silog_sqrt_loss(preds[-1], gt, mask, 0.85).item()


def test_mss_sum_of_independent_stage_losses():
    rng = np.random.default_rng(4)
    gt = rng.uniform(1, 4, size=(1, 32, 32))
    mask = (rng.uniform(size=gt.shape) > 0.2).astype(float)
    preds = pyramid(gt, rng)
    expected = 0.0
    for p in preds:
        _, h, w = p.shape
        g, m = downsample_gt(gt, mask, h, w)
        expected += silog_oracle(p.data, g, m, 0.85)
    assert abs(mss_loss(preds, gt, mask).item() - expected) < 1e-12


def test_mss_constant_scene_is_zero():
    gt = np.full((1, 32, 32), 2.5)
    preds = [Tensor(np.full((1, 32 // s, 32 // s), 2.5)) for s in (16, 8, 4, 2, 1)]
    assert mss_loss(preds, gt, np.ones_like(gt)).item() < 1e-5


def test_mss_skips_empty_stages():
    rng = np.random.default_rng(5)
    gt = rng.uniform(1, 4, size=(1, 32, 32))
    preds = pyramid(gt, rng)
    assert len(stage_losses(preds, gt, np.ones_like(gt), 0.85)) == 5
    with pytest.raises(EmptyMaskError):
        mss_loss(preds, gt, np.zeros_like(gt))


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(stage_weights=(1, 1))
    with pytest.raises(ConfigError):
        LossConfig(stage_weights=(0, 0, 0, 0, 0))


def test_mss_ignores_ground_truth_below_threshold():
    rng = np.random.default_rng(6)
    gt = rng.uniform(1, 4, size=(1, 32, 32))
    preds = pyramid(gt, rng)
    holes = gt.copy()
    holes[0, :8, :8] = 0.0  # missing returns encoded as zero depth
    mask = np.ones_like(gt)
    manual = np.ones_like(gt)
    manual[0, :8, :8] = 0.0
    assert mss_loss(preds, holes, mask).item() == mss_loss(preds, holes, manual).item()
