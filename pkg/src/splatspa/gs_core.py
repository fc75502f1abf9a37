"""2D Gaussian primitives: covariance algebra and pointwise density.

Each splat is parameterized by a center ``mu`` (pixels), a rotation angle
``theta`` (radians), per-axis log scales ``log_s``, an opacity logit whose
sigmoid is the blend opacity, an RGB color in [0, 1] and a fixed
compositing order key. The covariance is

    Sigma = R S S^T R^T,   R = rot(theta),  S = diag(exp(log_s)),

which is symmetric positive definite for any finite parameters. Density at
a point x is exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)), treated as zero once the
squared Mahalanobis distance exceeds ``DENSITY_CUTOFF_Q`` so splats have
bounded footprints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeMismatchError

# exp(-18/2) < 1.3e-4: below render quantization, so footprints stay bounded.
DENSITY_CUTOFF_Q = 18.0

# Column names in cloud/checkpoint order.
CLOUD_COLUMNS = ("mu", "theta", "log_s", "opacity_logit", "color", "order_key", "alive_mask")
PARAM_COLUMNS = ("mu", "theta", "log_s", "opacity_logit", "color")


def sigmoid(x):
    """Numerically stable logistic function; preserves scalar/array shape."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def inverse_sigmoid(p):
    """Logit of p in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


@dataclass
class Gaussian2D:
    """Logical view of one splat (see module docstring for the fields)."""

    mu: np.ndarray
    theta: float
    log_s: np.ndarray
    opacity_logit: float
    color: np.ndarray
    order_key: float

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)


@dataclass
class GaussianCloud:
    """Structure-of-arrays over n splats.

    All columns share length n; ``alive_mask`` marks splats that have not
    been physically removed yet.
    """

    mu: np.ndarray
    theta: np.ndarray
    log_s: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    order_key: np.ndarray
    alive_mask: np.ndarray

    def __post_init__(self):
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64).reshape(-1, 2)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64).reshape(-1)
        self.log_s = np.ascontiguousarray(self.log_s, dtype=np.float64).reshape(-1, 2)
        self.opacity_logit = np.ascontiguousarray(self.opacity_logit, dtype=np.float64).reshape(-1)
        self.color = np.ascontiguousarray(self.color, dtype=np.float64).reshape(-1, 3)
        self.order_key = np.ascontiguousarray(self.order_key, dtype=np.float64).reshape(-1)
        self.alive_mask = np.ascontiguousarray(self.alive_mask, dtype=bool).reshape(-1)
        n = self.mu.shape[0]
        for name in CLOUD_COLUMNS:
            if getattr(self, name).shape[0] != n:
                raise ShapeMismatchError(f"column {name} has length "
                                         f"{getattr(self, name).shape[0]}, expected {n}")

    @property
    def n(self):
        return self.mu.shape[0]

    @property
    def alive_count(self):
        return int(self.alive_mask.sum())

    def opacities(self):
        """Activated opacities sigmoid(logit), length n."""
        return sigmoid(self.opacity_logit)

    def gaussian(self, i):
        """Extract splat i as a Gaussian2D view (copies the row)."""
        return Gaussian2D(
            mu=self.mu[i].copy(),
            theta=float(self.theta[i]),
            log_s=self.log_s[i].copy(),
            opacity_logit=float(self.opacity_logit[i]),
            color=self.color[i].copy(),
            order_key=float(self.order_key[i]),
        )

    def copy(self):
        return GaussianCloud(*(getattr(self, c).copy() for c in CLOUD_COLUMNS))

    def compact(self, keep_indices):
        """New cloud containing only the given rows (all marked alive)."""
        keep = np.asarray(keep_indices, dtype=np.int64)
        cols = [getattr(self, c)[keep].copy() for c in CLOUD_COLUMNS[:-1]]
        return GaussianCloud(*cols, alive_mask=np.ones(len(keep), dtype=bool))


def empty_cloud():
    """Cloud with zero splats."""
    return GaussianCloud(
        mu=np.zeros((0, 2)), theta=np.zeros(0), log_s=np.zeros((0, 2)),
        opacity_logit=np.zeros(0), color=np.zeros((0, 3)),
        order_key=np.zeros(0), alive_mask=np.zeros(0, dtype=bool),
    )


def _check_finite(theta, log_s):
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(log_s))):
        raise InvalidParameterError("theta/log_s must be finite")


def build_covariance(theta, log_s):
    """Covariance R S S^T R^T as a 2x2 array.

    Eigenvalues are exp(2*log_s) and the matrix is symmetric positive
    definite whenever the inputs are finite.
    """
    _check_finite(theta, log_s)
    c, s = np.cos(theta), np.sin(theta)
    d0, d1 = np.exp(2.0 * np.asarray(log_s, dtype=np.float64))
    a = c * c * d0 + s * s * d1
    b = s * c * (d0 - d1)
    d = s * s * d0 + c * c * d1
    return np.array([[a, b], [b, d]])


def inverse_covariance(theta, log_s):
    """Sigma^-1 computed analytically as R diag(exp(-2 log_s)) R^T."""
    _check_finite(theta, log_s)
    c, s = np.cos(theta), np.sin(theta)
    i0, i1 = np.exp(-2.0 * np.asarray(log_s, dtype=np.float64))
    a = c * c * i0 + s * s * i1
    b = s * c * (i0 - i1)
    d = s * s * i0 + c * c * i1
    return np.array([[a, b], [b, d]])


def covariance_derivatives(theta, log_s):
    """Partials of Sigma w.r.t. (theta, log_s0, log_s1), each 2x2.

    d Sigma / d theta      = R' D R^T + (R' D R^T)^T
    d Sigma / d log_s_k    = 2 exp(2 log_s_k) * outer(R[:,k], R[:,k])
    with D = diag(exp(2 log_s)).
    """
    _check_finite(theta, log_s)
    c, s = np.cos(theta), np.sin(theta)
    d0, d1 = np.exp(2.0 * np.asarray(log_s, dtype=np.float64))
    d_theta = np.array([
        [2.0 * s * c * (d1 - d0), (c * c - s * s) * (d0 - d1)],
        [(c * c - s * s) * (d0 - d1), 2.0 * s * c * (d0 - d1)],
    ])
    d_l0 = (2.0 * d0) * np.array([[c * c, c * s], [c * s, s * s]])
    d_l1 = (2.0 * d1) * np.array([[s * s, -(c * s)], [-(c * s), c * c]])
    return d_theta, d_l0, d_l1


def eval_gaussian(g, x, cutoff=DENSITY_CUTOFF_Q):
    """Density of splat g at point x: exp(-0.5 d^2), d^2 the squared
    Mahalanobis distance; zero beyond the cutoff."""
    p = inverse_covariance(g.theta, g.log_s)
    d = np.asarray(x, dtype=np.float64) - g.mu
    q = d @ p @ d
    if q > cutoff:
        return 0.0
    return float(np.exp(-0.5 * q))


def eval_gaussian_grad(g, x, cutoff=DENSITY_CUTOFF_Q):
    """Partials of the density w.r.t. (mu, theta, log_s).

    Returns (d_mu, d_theta, d_log_s) with shapes ((2,), scalar, (2,)).
    With w = Sigma^-1 (x - mu) and G the density:
        dG/dmu      = G * w
        dG/dtheta   = 0.5 * G * w^T (dSigma/dtheta) w
        dG/dlog_s_k = 0.5 * G * w^T (dSigma/dlog_s_k) w
    All partials are zero beyond the density cutoff.
    """
    p = inverse_covariance(g.theta, g.log_s)
    d = np.asarray(x, dtype=np.float64) - g.mu
    w = p @ d
    q = d @ w
    if q > cutoff:
        return np.zeros(2), 0.0, np.zeros(2)
    gval = np.exp(-0.5 * q)
    d_th, d_l0, d_l1 = covariance_derivatives(g.theta, g.log_s)
    d_mu = gval * w
    d_theta = 0.5 * gval * (w @ d_th @ w)
    d_log_s = 0.5 * gval * np.array([w @ d_l0 @ w, w @ d_l1 @ w])
    return d_mu, float(d_theta), d_log_s


# Vectorized column forms used by the renderer. Entries are the packed
# symmetric components (m00, m01, m11) per splat.

def covariance_columns(theta, log_s):
    c, s = np.cos(theta), np.sin(theta)
    d0 = np.exp(2.0 * log_s[:, 0])
    d1 = np.exp(2.0 * log_s[:, 1])
    return np.stack([c * c * d0 + s * s * d1,
                     s * c * (d0 - d1),
                     s * s * d0 + c * c * d1], axis=1)


def inverse_covariance_columns(theta, log_s):
    c, s = np.cos(theta), np.sin(theta)
    i0 = np.exp(-2.0 * log_s[:, 0])
    i1 = np.exp(-2.0 * log_s[:, 1])
    return np.stack([c * c * i0 + s * s * i1,
                     s * c * (i0 - i1),
                     s * s * i0 + c * c * i1], axis=1)


def covariance_derivative_columns(theta, log_s):
    """Packed (m00, m01, m11) partials of Sigma per splat, for each of
    theta, log_s0, log_s1."""
    c, s = np.cos(theta), np.sin(theta)
    d0 = np.exp(2.0 * log_s[:, 0])
    d1 = np.exp(2.0 * log_s[:, 1])
    d_theta = np.stack([2.0 * s * c * (d1 - d0),
                        (c * c - s * s) * (d0 - d1),
                        2.0 * s * c * (d0 - d1)], axis=1)
    d_l0 = np.stack([(2.0 * d0) * (c * c), (2.0 * d0) * (c * s),
                     (2.0 * d0) * (s * s)], axis=1)
    d_l1 = np.stack([(2.0 * d1) * (s * s), (2.0 * d1) * (-(c * s)),
                     (2.0 * d1) * (c * c)], axis=1)
    return d_theta, d_l0, d_l1
