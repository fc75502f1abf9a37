"""Forward rendering by ordered alpha blending, and its analytic backward.

Per pixel the composite is C = sum_i c_i alpha_i prod_{j<i} (1 - alpha_j)
plus the background weighted by the residual transmittance, where
alpha_i = opacity_i * density_i(pixel center) and splats are walked in
ascending ``order_key`` (ties broken by index). Compositing for a pixel
stops once its transmittance falls below ``transmittance_floor``.

Work is split over pixel tiles. Tiles are independent: the forward image
regions are disjoint and backward gradients go to per-tile scratch merged
in a fixed tile order, so threaded and serial renders are bit-identical.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidParameterError, ShapeMismatchError
from .gs_core import (
    DENSITY_CUTOFF_Q,
    covariance_columns,
    covariance_derivative_columns,
    inverse_covariance_columns,
    sigmoid,
)


@dataclass
class RenderSettings:
    width: int
    height: int
    background: tuple = (0.0, 0.0, 0.0)
    tile_size: int = 16
    transmittance_floor: float = 1e-4
    density_cutoff: float = DENSITY_CUTOFF_Q
    threads: int | None = None  # None: SPLATSPA_THREADS if set, else 1

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError("width and height must be >= 1")
        if not (0.0 < self.transmittance_floor < 1.0):
            raise InvalidParameterError("transmittance_floor must be in (0, 1)")
        ts = self.tile_size
        if ts < 1 or (ts & (ts - 1)) != 0:
            raise InvalidParameterError("tile_size must be a positive power of two")
        bg = np.asarray(self.background, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(bg)):
            raise InvalidParameterError("background must be finite RGB")
        self.background = tuple(float(v) for v in bg)


@dataclass
class RenderBuffers:
    """Forward image plus per-parameter gradient columns (d loss / d param)."""

    image: np.ndarray
    d_mu: np.ndarray
    d_theta: np.ndarray
    d_log_s: np.ndarray
    d_opacity_logit: np.ndarray
    d_color: np.ndarray

    def param_grads(self):
        return {
            "mu": self.d_mu,
            "theta": self.d_theta,
            "log_s": self.d_log_s,
            "opacity_logit": self.d_opacity_logit,
            "color": self.d_color,
        }


def _thread_count(settings):
    env = os.environ.get("SPLATSPA_THREADS")
    cap = int(env) if env else None
    threads = settings.threads if settings.threads is not None else (cap or 1)
    if cap is not None:
        threads = min(threads, cap)
    return max(1, threads)


def composite_order(cloud):
    """Alive splat indices in blend order: ascending order_key, ties by index."""
    if not np.all(np.isfinite(cloud.order_key)):
        raise InvalidParameterError("order keys must be finite")
    order = np.argsort(cloud.order_key, kind="stable")
    return order[cloud.alive_mask[order]]


class _Prepared:
    """Per-render geometry: packed covariances, footprints, tile lists."""

    def __init__(self, cloud, settings, with_derivs):
        self.order = composite_order(cloud)
        self.mu = cloud.mu
        self.color = cloud.color
        self.opac = sigmoid(cloud.opacity_logit)
        self.icov = inverse_covariance_columns(cloud.theta, cloud.log_s)
        if with_derivs:
            self.dcov_th, self.dcov_l0, self.dcov_l1 = \
                covariance_derivative_columns(cloud.theta, cloud.log_s)
        cov = covariance_columns(cloud.theta, cloud.log_s)
        # conservative axis-aligned footprint of the cutoff ellipse
        rx = np.sqrt(settings.density_cutoff * np.maximum(cov[:, 0], 0.0))
        ry = np.sqrt(settings.density_cutoff * np.maximum(cov[:, 2], 0.0))
        self.x0 = np.floor(self.mu[:, 0] - rx) - 1.0
        self.x1 = np.ceil(self.mu[:, 0] + rx) + 1.0
        self.y0 = np.floor(self.mu[:, 1] - ry) - 1.0
        self.y1 = np.ceil(self.mu[:, 1] + ry) + 1.0

    def tile_ids(self, tx0, ty0, tx1, ty1):
        o = self.order
        hit = ((self.x0[o] < tx1) & (self.x1[o] >= tx0)
               & (self.y0[o] < ty1) & (self.y1[o] >= ty0))
        return np.ascontiguousarray(o[hit])


def _tiles(settings):
    ts = settings.tile_size
    out = []
    for y0 in range(0, settings.height, ts):
        for x0 in range(0, settings.width, ts):
            out.append((x0, y0, min(x0 + ts, settings.width),
                        min(y0 + ts, settings.height)))
    return out


def _run_tiles(tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        for t in tasks:
            t()
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for f in [pool.submit(t) for t in tasks]:
                f.result()


def render(cloud, settings, _weights_out=None):
    """Composite the cloud into an H x W x 3 image in [0, 1]."""
    h, w = settings.height, settings.width
    image = np.empty((h, w, 3), dtype=np.float64)
    bg = np.asarray(settings.background, dtype=np.float64)
    accumulate = _weights_out is not None
    if cloud.n == 0 or cloud.alive_count == 0:
        image[:] = bg
        return image

    prep = _Prepared(cloud, settings, with_derivs=False)
    tiles = _tiles(settings)
    tile_ids = [prep.tile_ids(*t) for t in tiles]
    scratch = [np.zeros(len(ids), dtype=np.float64) if accumulate else
               np.zeros(0, dtype=np.float64) for ids in tile_ids]

    def task(i):
        x0, y0, x1, y1 = tiles[i]
        _kernels.forward_tile(prep.mu, prep.icov, prep.opac, prep.color,
                              tile_ids[i], x0, y0, x1, y1, bg,
                              settings.transmittance_floor,
                              settings.density_cutoff, image,
                              scratch[i], accumulate)

    _run_tiles([lambda i=i: task(i) for i in range(len(tiles))],
               _thread_count(settings))
    if accumulate:
        for ids, ws in zip(tile_ids, scratch):
            np.add.at(_weights_out, ids, ws)
    np.clip(image, 0.0, 1.0, out=image)
    return image


def render_weight_sums(cloud, settings):
    """Image plus per-splat accumulated blend-weight mass over all pixels."""
    weights = np.zeros(cloud.n, dtype=np.float64)
    image = render(cloud, settings, _weights_out=weights)
    return image, weights


def render_backward(cloud, settings, d_loss_d_image):
    """Gradients of a pixel-wise loss w.r.t. every splat parameter.

    ``d_loss_d_image`` is the upstream H x W x 3 gradient. Returns
    RenderBuffers holding the forward image and one gradient column per
    parameter column; dead splats receive zero gradient.
    """
    h, w = settings.height, settings.width
    d_loss_d_image = np.asarray(d_loss_d_image, dtype=np.float64)
    if d_loss_d_image.shape != (h, w, 3):
        raise ShapeMismatchError(
            f"d_loss_d_image shape {d_loss_d_image.shape} != {(h, w, 3)}")
    d_loss_d_image = np.ascontiguousarray(d_loss_d_image)

    n = cloud.n
    buffers = RenderBuffers(
        image=np.empty((h, w, 3), dtype=np.float64),
        d_mu=np.zeros((n, 2)), d_theta=np.zeros(n), d_log_s=np.zeros((n, 2)),
        d_opacity_logit=np.zeros(n), d_color=np.zeros((n, 3)),
    )
    bg = np.asarray(settings.background, dtype=np.float64)
    if n == 0 or cloud.alive_count == 0:
        buffers.image[:] = bg
        return buffers

    prep = _Prepared(cloud, settings, with_derivs=True)
    tiles = _tiles(settings)
    tile_ids = [prep.tile_ids(*t) for t in tiles]
    scratch = [
        (np.zeros((len(ids), 2)), np.zeros(len(ids)), np.zeros((len(ids), 2)),
         np.zeros(len(ids)), np.zeros((len(ids), 3)))
        for ids in tile_ids
    ]

    def task(i):
        x0, y0, x1, y1 = tiles[i]
        g_mu, g_theta, g_logs, g_logit, g_color = scratch[i]
        _kernels.backward_tile(prep.mu, prep.icov, prep.opac, prep.color,
                               prep.dcov_th, prep.dcov_l0, prep.dcov_l1,
                               tile_ids[i], x0, y0, x1, y1, bg,
                               settings.transmittance_floor,
                               settings.density_cutoff,
                               d_loss_d_image, buffers.image,
                               g_mu, g_theta, g_logs, g_logit, g_color)

    _run_tiles([lambda i=i: task(i) for i in range(len(tiles))],
               _thread_count(settings))

    # merge per-tile scratch in fixed tile order
    for ids, (g_mu, g_theta, g_logs, g_logit, g_color) in zip(tile_ids, scratch):
        np.add.at(buffers.d_mu, ids, g_mu)
        np.add.at(buffers.d_theta, ids, g_theta)
        np.add.at(buffers.d_log_s, ids, g_logs)
        np.add.at(buffers.d_opacity_logit, ids, g_logit)
        np.add.at(buffers.d_color, ids, g_color)
    np.clip(buffers.image, 0.0, 1.0, out=buffers.image)
    return buffers
