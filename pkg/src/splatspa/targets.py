"""Synthetic targets for the desk-scale image-fitting testbed."""

import numpy as np


def _value_noise(width, height, rng, cell):
    """Smoothstep-interpolated lattice noise in [-1, 1], one octave."""
    gw, gh = width // cell + 2, height // cell + 2
    grid = rng.uniform(-1.0, 1.0, (gh, gw, 3))
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    gx, gy = xs / cell, ys / cell
    x0, y0 = gx.astype(int), gy.astype(int)
    fx = (gx - x0)[..., None]
    fy = (gy - y0)[..., None]
    fx = fx * fx * (3.0 - 2.0 * fx)
    fy = fy * fy * (3.0 - 2.0 * fy)
    top = grid[y0, x0] * (1.0 - fx) + grid[y0, x0 + 1] * fx
    bottom = grid[y0 + 1, x0] * (1.0 - fx) + grid[y0 + 1, x0 + 1] * fx
    return top * (1.0 - fy) + bottom * fy


def synthetic_image(width, height, seed=0, blobs=6, texture=0.0):
    """Deterministic RGB test image in [0, 1].

    The base is smooth: low-frequency color gradients plus a few soft
    blobs. ``texture`` > 0 superposes multi-octave lattice noise so that a
    small splat budget actually binds; 1.0 gives a natural-looking amount
    of fine detail."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    u = xs / max(width - 1, 1)
    v = ys / max(height - 1, 1)
    img = np.stack([
        0.35 + 0.3 * u + 0.15 * np.sin(2.1 * np.pi * v),
        0.45 + 0.25 * v - 0.15 * np.cos(1.7 * np.pi * u),
        0.5 + 0.2 * np.sin(1.3 * np.pi * (u + v)),
    ], axis=2)
    for _ in range(blobs):
        cx, cy = rng.uniform(0.1, 0.9, 2) * (width, height)
        sigma = rng.uniform(0.08, 0.25) * min(width, height)
        tint = rng.uniform(-0.35, 0.35, 3)
        bump = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
        img += bump[:, :, None] * tint
    if texture > 0.0:
        base = max(min(width, height) // 4, 2)
        for cell, amp in ((base, 0.25), (max(base // 3, 2), 0.15),
                          (max(base // 8, 2), 0.08)):
            img += texture * amp * _value_noise(width, height, rng, cell)
    return np.clip(img, 0.0, 1.0)
