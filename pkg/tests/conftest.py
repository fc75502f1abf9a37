import numpy as np
import pytest

from splatspa.gs_core import GaussianCloud
from splatspa.targets import synthetic_image


def make_cloud(rng, n, width=16, height=16, smooth=True):
    """Random test cloud. With ``smooth=True`` the scales are large enough
    that the density cutoff ellipse lies outside the image and opacities
    stay away from saturation, so the composite is differentiable
    everywhere finite differences will probe it."""
    if smooth:
        log_s = rng.uniform(np.log(4.2), np.log(6.0), (n, 2))
        mu = rng.uniform(0.25 * width, 0.75 * width, (n, 2))
        logits = rng.uniform(-2.0, 0.5, n)
    else:
        log_s = rng.uniform(np.log(0.8), np.log(3.0), (n, 2))
        mu = rng.uniform(0, width, (n, 2))
        logits = rng.uniform(-3.0, 3.0, n)
    return GaussianCloud(
        mu=mu,
        theta=rng.uniform(-np.pi, np.pi, n),
        log_s=log_s,
        opacity_logit=logits,
        color=rng.uniform(0.05, 0.95, (n, 3)),
        order_key=rng.uniform(0, 1, n),
        alive_mask=np.ones(n, dtype=bool),
    )


def central_differences(objective, column, h):
    """Per-entry central finite differences of a scalar objective w.r.t.
    one parameter array, mutating and restoring it in place."""
    fd = np.zeros_like(column)
    it = np.nditer(column, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = column[idx]
        column[idx] = old + h
        fp = objective()
        column[idx] = old - h
        fm = objective()
        column[idx] = old
        fd[idx] = (fp - fm) / (2.0 * h)
    return fd


def rel_error(analytic, reference, floor=1e-12):
    """Max-norm error of ``analytic`` relative to the reference scale."""
    scale = max(float(np.max(np.abs(reference))), floor)
    return float(np.max(np.abs(analytic - reference))) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_target():
    return synthetic_image(32, 32, seed=5)
