import numpy as np
import pytest

from splatspa.errors import InvalidParameterError, ShapeMismatchError
from splatspa.loss_metrics import LossConfig, _gaussian_window, loss, psnr, ssim

from conftest import central_differences, rel_error


def naive_ssim(pred, gt, cfg):
    """Unoptimized per-window reference: explicit loops over every valid
    window position and channel."""
    k1 = _gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    w2 = np.outer(k1, k1)
    win = cfg.ssim_window
    h, w, c = pred.shape
    vals = []
    for ch in range(c):
        for y in range(h - win + 1):
            for x in range(w - win + 1):
                px = pred[y:y + win, x:x + win, ch]
                gx = gt[y:y + win, x:x + win, ch]
                mx = float((w2 * px).sum())
                my = float((w2 * gx).sum())
                vx = float((w2 * px * px).sum()) - mx * mx
                vy = float((w2 * gx * gx).sum()) - my * my
                vxy = float((w2 * px * gx).sum()) - mx * my
                vals.append(((2 * mx * my + cfg.ssim_c1) * (2 * vxy + cfg.ssim_c2))
                            / ((mx * mx + my * my + cfg.ssim_c1)
                               * (vx + vy + cfg.ssim_c2)))
    return float(np.mean(vals))


class TestLoss:
    def test_zero_at_equality(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        val, grad = loss(img, img.copy())
        assert val == 0.0
        assert not grad.any()

    def test_rho_zero_is_mean_absolute_error(self, rng):
        pred = rng.uniform(0, 1, (12, 9, 3))
        gt = rng.uniform(0, 1, (12, 9, 3))
        val, _ = loss(pred, gt, LossConfig(rho=0.0))
        assert val == float(np.mean(np.abs(pred - gt)))

    def test_gradient_matches_finite_differences(self, rng):
        pred = rng.uniform(0.05, 0.95, (16, 16, 3))
        gt = rng.uniform(0.05, 0.95, (16, 16, 3))
        cfg = LossConfig(rho=0.2)
        _, grad = loss(pred, gt, cfg)
        fd = central_differences(lambda: loss(pred, gt, cfg)[0], pred, 1e-5)
        assert rel_error(grad, fd) < 1e-4

    def test_l1_subgradient_levels(self, rng):
        pred = rng.uniform(0, 1, (8, 8, 3))
        gt = pred.copy()
        gt[0, 0, 0] += 0.2
        gt[1, 1, 1] -= 0.2
        rho = 0.25
        _, grad = loss(pred, gt, LossConfig(rho=rho, ssim_window=5))
        # isolate the L1 part by subtracting the structural term's gradient
        _, g_ssim_only = loss(pred, gt, LossConfig(rho=1.0, ssim_window=5))
        l1_grad = grad - rho * g_ssim_only
        m = pred.size
        levels = np.unique(np.round(l1_grad * m / (1 - rho), 9))
        assert set(levels).issubset({-1.0, 0.0, 1.0})

    def test_nonnegative(self, rng):
        for _ in range(10):
            pred = rng.uniform(0, 1, (16, 16, 3))
            gt = rng.uniform(0, 1, (16, 16, 3))
            assert loss(pred, gt)[0] >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_config_validation(self):
        with pytest.raises(InvalidParameterError):
            LossConfig(rho=1.5)
        with pytest.raises(InvalidParameterError):
            LossConfig(ssim_window=4)
        with pytest.raises(InvalidParameterError):
            LossConfig(ssim_window=1)


class TestPsnr:
    def test_identical_hits_cap(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        assert psnr(img, img.copy()) == 99.0

    def test_uniform_error_point_one(self):
        a = np.full((10, 10, 3), 0.5)
        b = np.full((10, 10, 3), 0.6)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_matches_double_loop_mse(self, rng):
        pred = rng.uniform(0, 1, (7, 9, 3))
        gt = rng.uniform(0, 1, (7, 9, 3))
        total = 0.0
        count = 0
        for y in range(7):
            for x in range(9):
                for c in range(3):
                    total += (pred[y, x, c] - gt[y, x, c]) ** 2
                    count += 1
        expected = 10.0 * np.log10(1.0 / (total / count))
        assert psnr(pred, gt) == pytest.approx(expected, rel=1e-12)

    def test_symmetry(self, rng):
        pred = rng.uniform(0, 1, (6, 6, 3))
        gt = rng.uniform(0, 1, (6, 6, 3))
        assert psnr(pred, gt) == psnr(gt, pred)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


class TestSsim:
    def test_identical_is_exactly_one(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        assert ssim(img, img.copy()) == 1.0

    def test_constant_images_luminance_closed_form(self):
        cfg = LossConfig()
        a = np.full((16, 16, 3), 0.3)
        b = np.full((16, 16, 3), 0.7)
        expected = (2 * 0.3 * 0.7 + cfg.ssim_c1) / (0.3 ** 2 + 0.7 ** 2 + cfg.ssim_c1)
        assert ssim(a, b, cfg) == pytest.approx(expected, rel=1e-12)

    def test_matches_naive_window_reference(self, rng):
        cfg = LossConfig(ssim_window=7)
        pred = rng.uniform(0, 1, (12, 14, 3))
        gt = rng.uniform(0, 1, (12, 14, 3))
        assert ssim(pred, gt, cfg) == pytest.approx(naive_ssim(pred, gt, cfg),
                                                    rel=1e-12)

    def test_symmetry(self, rng):
        pred = rng.uniform(0, 1, (16, 16, 3))
        gt = rng.uniform(0, 1, (16, 16, 3))
        assert ssim(pred, gt) == ssim(gt, pred)

    def test_too_small_image_rejected(self):
        with pytest.raises(ShapeMismatchError):
            ssim(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))
