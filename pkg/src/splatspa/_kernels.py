"""Numba kernels for tile-wise front-to-back compositing.

Each kernel processes one pixel tile. Pixels are independent; the blend
within a pixel walks the splat list in a fixed order, so results do not
depend on how tiles are scheduled. ``ids`` maps the tile-local list to
global cloud rows; inverse covariances and covariance partials arrive as
packed (m00, m01, m11) rows.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def forward_tile(mu, icov, opac, color, ids, x0, y0, x1, y1,
                 bg, floor, cutoff, image, weights, accumulate_weights):
    for py in range(y0, y1):
        cy = py + 0.5
        for px in range(x0, x1):
            cx = px + 0.5
            t = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            for jj in range(ids.shape[0]):
                if t < floor:
                    break
                gi = ids[jj]
                dx = cx - mu[gi, 0]
                dy = cy - mu[gi, 1]
                q = icov[gi, 0] * dx * dx + 2.0 * icov[gi, 1] * dx * dy \
                    + icov[gi, 2] * dy * dy
                if q > cutoff:
                    continue
                alpha = opac[gi] * np.exp(-0.5 * q)
                w = alpha * t
                r += color[gi, 0] * w
                g += color[gi, 1] * w
                b += color[gi, 2] * w
                if accumulate_weights:
                    weights[jj] += w
                t *= 1.0 - alpha
            image[py, px, 0] = r + bg[0] * t
            image[py, px, 1] = g + bg[1] * t
            image[py, px, 2] = b + bg[2] * t


@njit(cache=True, nogil=True)
def backward_tile(mu, icov, opac, color, dcov_th, dcov_l0, dcov_l1,
                  ids, x0, y0, x1, y1, bg, floor, cutoff, d_image, image,
                  g_mu, g_theta, g_logs, g_logit, g_color):
    k = ids.shape[0]
    hit_jj = np.empty(k, dtype=np.int64)
    hit_g = np.empty(k, dtype=np.float64)
    hit_t = np.empty(k, dtype=np.float64)
    for py in range(y0, y1):
        cy = py + 0.5
        for px in range(x0, x1):
            cx = px + 0.5
            # pass 1: forward blend, recording contributors
            t = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            m = 0
            for jj in range(k):
                if t < floor:
                    break
                gi = ids[jj]
                dx = cx - mu[gi, 0]
                dy = cy - mu[gi, 1]
                q = icov[gi, 0] * dx * dx + 2.0 * icov[gi, 1] * dx * dy \
                    + icov[gi, 2] * dy * dy
                if q > cutoff:
                    continue
                gval = np.exp(-0.5 * q)
                alpha = opac[gi] * gval
                w = alpha * t
                r += color[gi, 0] * w
                g += color[gi, 1] * w
                b += color[gi, 2] * w
                hit_jj[m] = jj
                hit_g[m] = gval
                hit_t[m] = t
                m += 1
                t *= 1.0 - alpha
            image[py, px, 0] = r + bg[0] * t
            image[py, px, 1] = g + bg[1] * t
            image[py, px, 2] = b + bg[2] * t

            u0 = d_image[py, px, 0]
            u1 = d_image[py, px, 1]
            u2 = d_image[py, px, 2]
            if u0 == 0.0 and u1 == 0.0 and u2 == 0.0:
                continue

            # pass 2: back-to-front; behind[c] is the light composited
            # after the current splat, so dC/dalpha = c*T - behind/(1-alpha).
            b0 = bg[0] * t
            b1 = bg[1] * t
            b2 = bg[2] * t
            for s in range(m - 1, -1, -1):
                jj = hit_jj[s]
                gi = ids[jj]
                gval = hit_g[s]
                ti = hit_t[s]
                alpha = opac[gi] * gval
                om = 1.0 - alpha
                # saturated alpha: everything behind is fully occluded and
                # its reappearance rate is not recoverable from t alone.
                inv_om = 1.0 / om if om > 0.0 else 0.0
                d_alpha = (u0 * (color[gi, 0] * ti - b0 * inv_om)
                           + u1 * (color[gi, 1] * ti - b1 * inv_om)
                           + u2 * (color[gi, 2] * ti - b2 * inv_om))
                w = alpha * ti
                g_color[jj, 0] += u0 * w
                g_color[jj, 1] += u1 * w
                g_color[jj, 2] += u2 * w
                ai = opac[gi]
                g_logit[jj] += d_alpha * gval * ai * (1.0 - ai)
                # geometry chain: dL/dq = d_alpha * a * dG/dq, dG/dq = -G/2
                dldq = d_alpha * ai * (-0.5) * gval
                dx = cx - mu[gi, 0]
                dy = cy - mu[gi, 1]
                wx = icov[gi, 0] * dx + icov[gi, 1] * dy
                wy = icov[gi, 1] * dx + icov[gi, 2] * dy
                # dq/dmu = -2 Sigma^-1 (x - mu)
                g_mu[jj, 0] += dldq * (-2.0 * wx)
                g_mu[jj, 1] += dldq * (-2.0 * wy)
                # dq/dp = -w^T (dSigma/dp) w for covariance parameters
                g_theta[jj] += dldq * (-(wx * wx * dcov_th[gi, 0]
                                         + 2.0 * wx * wy * dcov_th[gi, 1]
                                         + wy * wy * dcov_th[gi, 2]))
                g_logs[jj, 0] += dldq * (-(wx * wx * dcov_l0[gi, 0]
                                           + 2.0 * wx * wy * dcov_l0[gi, 1]
                                           + wy * wy * dcov_l0[gi, 2]))
                g_logs[jj, 1] += dldq * (-(wx * wx * dcov_l1[gi, 0]
                                           + 2.0 * wx * wy * dcov_l1[gi, 1]
                                           + wy * wy * dcov_l1[gi, 2]))
                b0 += color[gi, 0] * w
                b1 += color[gi, 1] * w
                b2 += color[gi, 2] * w
