"""Training loss (L1 + structural-dissimilarity blend) and image metrics.

The loss is (1 - rho) * L1 + rho * DSSIM with DSSIM = (1 - SSIM) / 2.
SSIM follows the windowed form: Gaussian-weighted local means/variances
over valid (un-padded) windows, per channel, averaged. The gradient of
the full loss w.r.t. the predicted image is analytic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeMismatchError

PSNR_CAP_DB = 99.0


@dataclass
class LossConfig:
    rho: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise InvalidParameterError("rho must be in [0, 1]")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise InvalidParameterError("ssim_window must be odd and >= 3")


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred = pred[:, :, None]
        gt = gt[:, :, None]
    if pred.ndim != 3:
        raise ShapeMismatchError(f"expected H x W [x C] images, got shape {pred.shape}")
    return pred, gt


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _corr_valid(img, k):
    """Separable valid-mode correlation of an H x W x C image with a 1D
    window applied along both spatial axes."""
    taps = len(k)
    h, w, c = img.shape
    tmp = np.zeros((h - taps + 1, w, c))
    for t in range(taps):
        tmp += k[t] * img[t:t + tmp.shape[0]]
    out = np.zeros((tmp.shape[0], w - taps + 1, c))
    for t in range(taps):
        out += k[t] * tmp[:, t:t + out.shape[1]]
    return out


def _corr_adjoint(maps, k, full_shape):
    """Adjoint of _corr_valid: scatter valid-window values back to pixels."""
    taps = len(k)
    hv, wv, c = maps.shape
    tmp = np.zeros((hv, full_shape[1], c))
    for t in range(taps):
        tmp[:, t:t + wv] += k[t] * maps
    out = np.zeros((full_shape[0], full_shape[1], c))
    for t in range(taps):
        out[t:t + hv] += k[t] * tmp
    return out


def _ssim_maps(pred, gt, cfg):
    if min(pred.shape[0], pred.shape[1]) < cfg.ssim_window:
        raise ShapeMismatchError(
            f"images smaller than the {cfg.ssim_window}x{cfg.ssim_window} SSIM window")
    k = _gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    c = pred.shape[2]
    # one correlation pass over the five stacked moment maps
    stacked = _corr_valid(
        np.concatenate([pred, gt, pred * pred, gt * gt, pred * gt], axis=2), k)
    mu_x, mu_y, mxx, myy, mxy = (stacked[:, :, i * c:(i + 1) * c] for i in range(5))
    vx = mxx - mu_x * mu_x
    vy = myy - mu_y * mu_y
    vxy = mxy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + cfg.ssim_c1
    a2 = 2.0 * vxy + cfg.ssim_c2
    b1 = mu_x * mu_x + mu_y * mu_y + cfg.ssim_c1
    b2 = vx + vy + cfg.ssim_c2
    s_map = (a1 * a2) / (b1 * b2)
    return k, mu_x, mu_y, a1, a2, b1, b2, s_map


def ssim(pred, gt, cfg=None):
    """Mean local SSIM over valid windows and channels; ssim(x, x) = 1."""
    cfg = cfg or LossConfig()
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(_ssim_maps(pred, gt, cfg)[-1]))


def _ssim_with_grad(pred, gt, cfg):
    k, mu_x, mu_y, a1, a2, b1, b2, s_map = _ssim_maps(pred, gt, cfg)
    n_windows = s_map.size
    c = pred.shape[2]
    bb = b1 * b2
    # partials of the per-window SSIM w.r.t. (mu_x, sum w x^2, sum w x y)
    f_mu = (2.0 * mu_y * (a2 - a1)) / bb + 2.0 * mu_x * s_map * (1.0 / b2 - 1.0 / b1)
    f_xx = -s_map / b2
    f_xy = 2.0 * a1 / bb
    adj = _corr_adjoint(np.concatenate([f_mu, f_xx, f_xy], axis=2), k, pred.shape)
    grad = (adj[:, :, 0:c] + 2.0 * pred * adj[:, :, c:2 * c]
            + gt * adj[:, :, 2 * c:]) / n_windows
    return float(np.mean(s_map)), grad


def loss(pred, gt, cfg=None):
    """Blended training loss and its gradient w.r.t. ``pred``.

    Returns (scalar, d_loss_d_pred). The L1 term is the mean absolute
    error with subgradient 0 at zero residual; the structural term is
    skipped entirely when rho == 0.
    """
    cfg = cfg or LossConfig()
    pred, gt = _check_pair(pred, gt)
    m = pred.size
    diff = pred - gt
    if not diff.any():
        return 0.0, np.zeros_like(pred)
    l1 = float(np.mean(np.abs(diff)))
    grad = ((1.0 - cfg.rho) / m) * np.sign(diff)
    total = (1.0 - cfg.rho) * l1
    if cfg.rho > 0.0:
        s, ds = _ssim_with_grad(pred, gt, cfg)
        total += cfg.rho * (1.0 - s) / 2.0
        grad += cfg.rho * (-0.5) * ds
    return total, grad


def psnr(pred, gt, cap=PSNR_CAP_DB):
    """Peak signal-to-noise ratio in dB for unit-peak images."""
    pred, gt = _check_pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse < 1e-12:
        return cap
    return float(10.0 * np.log10(1.0 / mse))
