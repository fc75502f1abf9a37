import math

import numpy as np
import pytest

from splatspa.errors import InvalidParameterError, ShapeMismatchError
from splatspa.gs_core import (
    Gaussian2D,
    GaussianCloud,
    build_covariance,
    covariance_columns,
    covariance_derivative_columns,
    covariance_derivatives,
    empty_cloud,
    eval_gaussian,
    eval_gaussian_grad,
    inverse_covariance,
    inverse_covariance_columns,
    inverse_sigmoid,
    sigmoid,
)

from conftest import make_cloud


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def covariance_oracle(theta, log_s):
    # independent route: explicit matrix products
    r = rotation(theta)
    s = np.diag(np.exp(log_s))
    return r @ s @ s.T @ r.T


def gaussian(rng=None, **kw):
    defaults = dict(mu=np.array([0.0, 0.0]), theta=0.0,
                    log_s=np.array([0.0, 0.0]), opacity_logit=0.0,
                    color=np.array([1.0, 1.0, 1.0]), order_key=0.0)
    defaults.update(kw)
    return Gaussian2D(**defaults)


class TestBuildCovariance:
    def test_identity(self):
        assert np.array_equal(build_covariance(0.0, np.zeros(2)), np.eye(2))

    def test_quarter_turn_swaps_axes(self):
        cov = build_covariance(math.pi / 2, np.array([math.log(2.0), 0.0]))
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0]), atol=1e-12)

    def test_matches_matrix_product_oracle(self):
        cov = build_covariance(0.3, np.array([0.1, -0.2]))
        np.testing.assert_allclose(cov, covariance_oracle(0.3, np.array([0.1, -0.2])),
                                   rtol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidParameterError):
            build_covariance(np.nan, np.zeros(2))
        with pytest.raises(InvalidParameterError):
            build_covariance(0.0, np.array([np.inf, 0.0]))

    def test_symmetry_and_determinant(self, rng):
        for _ in range(100):
            theta = rng.uniform(-4, 4)
            log_s = rng.uniform(-2, 2, 2)
            cov = build_covariance(theta, log_s)
            assert np.array_equal(cov, cov.T)
            det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
            expected = math.exp(2.0 * (log_s[0] + log_s[1]))
            assert abs(det - expected) <= 1e-10 * expected

    def test_inverse_is_inverse(self, rng):
        for _ in range(50):
            theta = rng.uniform(-4, 4)
            log_s = rng.uniform(-1.5, 1.5, 2)
            prod = build_covariance(theta, log_s) @ inverse_covariance(theta, log_s)
            np.testing.assert_allclose(prod, np.eye(2), atol=1e-10)


class TestEvalGaussian:
    def test_unit_at_center(self):
        g = gaussian(mu=np.array([3.0, 4.0]))
        assert eval_gaussian(g, (3.0, 4.0)) == 1.0

    def test_isotropic_unit_distance(self):
        g = gaussian()
        assert eval_gaussian(g, (1.0, 0.0)) == pytest.approx(math.exp(-0.5), rel=1e-12)

    def test_matches_explicit_inverse_oracle(self):
        g = gaussian(theta=0.3, log_s=np.array([0.1, -0.2]))
        d = np.array([0.5, -0.7])
        cov = covariance_oracle(0.3, np.array([0.1, -0.2]))
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[0, 1], cov[0, 0]]]) / det
        expected = math.exp(-0.5 * d @ inv @ d)
        assert eval_gaussian(g, g.mu + d) == pytest.approx(expected, rel=1e-12)

    def test_rotation_invariance(self, rng):
        for _ in range(50):
            g = gaussian(theta=rng.uniform(-2, 2), log_s=rng.uniform(-0.5, 0.5, 2))
            d = rng.uniform(-1.5, 1.5, 2)
            phi = rng.uniform(-3, 3)
            g_rot = gaussian(theta=g.theta + phi, log_s=g.log_s)
            v0 = eval_gaussian(g, g.mu + d)
            v1 = eval_gaussian(g_rot, g_rot.mu + rotation(phi) @ d)
            assert v1 == pytest.approx(v0, rel=1e-8)

    def test_cutoff_zeroes_far_field(self):
        g = gaussian()
        assert eval_gaussian(g, (10.0, 0.0)) == 0.0


class TestEvalGaussianGrad:
    def test_zero_at_center(self):
        d_mu, d_theta, d_log_s = eval_gaussian_grad(gaussian(), (0.0, 0.0))
        assert np.array_equal(d_mu, np.zeros(2))
        assert d_theta == 0.0
        assert np.array_equal(d_log_s, np.zeros(2))

    def test_isotropic_offset_mu_grad(self):
        d_mu, _, _ = eval_gaussian_grad(gaussian(), (1.0, 0.0))
        assert d_mu[0] == pytest.approx(math.exp(-0.5), rel=1e-12)
        assert d_mu[1] == pytest.approx(0.0, abs=1e-15)

    def test_matches_finite_differences(self, rng):
        h = 1e-4
        for _ in range(100):
            theta = rng.uniform(-2, 2)
            log_s = rng.uniform(-0.6, 0.6, 2)
            mu = rng.uniform(-1, 1, 2)
            # keep the probe point well inside the cutoff
            x = mu + rng.uniform(-1.2, 1.2, 2) * np.exp(log_s).min()
            g = gaussian(mu=mu, theta=theta, log_s=log_s)
            d_mu, d_theta, d_log_s = eval_gaussian_grad(g, x)

            def value(mu=mu, theta=theta, log_s=log_s):
                return eval_gaussian(gaussian(mu=mu, theta=theta, log_s=log_s), x)

            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                fd = (value(mu=mu + e) - value(mu=mu - e)) / (2 * h)
                assert d_mu[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)
                fd = (value(log_s=log_s + e) - value(log_s=log_s - e)) / (2 * h)
                assert d_log_s[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)
            fd = (value(theta=theta + h) - value(theta=theta - h)) / (2 * h)
            assert d_theta == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestColumnForms:
    def test_match_scalar_forms(self, rng):
        cloud = make_cloud(rng, 20, smooth=False)
        cov = covariance_columns(cloud.theta, cloud.log_s)
        icov = inverse_covariance_columns(cloud.theta, cloud.log_s)
        d_th, d_l0, d_l1 = covariance_derivative_columns(cloud.theta, cloud.log_s)
        for i in range(cloud.n):
            ref = build_covariance(cloud.theta[i], cloud.log_s[i])
            np.testing.assert_array_equal(
                cov[i], [ref[0, 0], ref[0, 1], ref[1, 1]])
            ref = inverse_covariance(cloud.theta[i], cloud.log_s[i])
            np.testing.assert_array_equal(
                icov[i], [ref[0, 0], ref[0, 1], ref[1, 1]])
            for packed, full in zip(
                    (d_th[i], d_l0[i], d_l1[i]),
                    covariance_derivatives(cloud.theta[i], cloud.log_s[i])):
                np.testing.assert_array_equal(
                    packed, [full[0, 0], full[0, 1], full[1, 1]])


class TestCloud:
    def test_column_length_mismatch(self, rng):
        cloud = make_cloud(rng, 4)
        with pytest.raises(ShapeMismatchError):
            GaussianCloud(cloud.mu, cloud.theta[:3], cloud.log_s,
                          cloud.opacity_logit, cloud.color, cloud.order_key,
                          cloud.alive_mask)

    def test_compact_keeps_rows(self, rng):
        cloud = make_cloud(rng, 6)
        sub = cloud.compact([4, 1])
        assert sub.n == 2
        np.testing.assert_array_equal(sub.mu, cloud.mu[[4, 1]])
        assert sub.alive_mask.all()

    def test_opacities_in_open_interval(self, rng):
        cloud = make_cloud(rng, 10, smooth=False)
        a = cloud.opacities()
        assert np.all(a > 0) and np.all(a < 1)

    def test_empty_cloud(self):
        assert empty_cloud().n == 0


class TestSigmoid:
    def test_roundtrip(self, rng):
        p = rng.uniform(0.01, 0.99, 50)
        np.testing.assert_allclose(sigmoid(inverse_sigmoid(p)), p, rtol=1e-12)

    def test_tails_are_stable(self):
        assert sigmoid(-1000.0) == 0.0
        assert sigmoid(1000.0) == 1.0
        assert sigmoid(0.0) == 0.5
