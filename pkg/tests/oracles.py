"""Independent reference computations used as test oracles.

Nothing here imports the package under test.  Each oracle is written from
first principles (closed forms, textbook Kalman recursions, brute force) so
agreement with the package is evidence rather than self-consistency.
"""

import math

import numpy as np


def ou_moments(y, q, theta, mu, sigma, dt):
    """Exact mean and variance of an OU process after ``dt`` from N(y, q)."""
    decay = math.exp(-theta * dt)
    mean = mu + (y - mu) * decay
    var = q * decay ** 2 + sigma ** 2 * (1.0 - decay ** 2) / (2.0 * theta)
    return mean, var


def ou_kalman(z, times, theta, mu, sigma, obs_var, y0, q0):
    """Scalar Kalman filter on the exact OU transition.

    Returns innovations, innovation variances, gains, filtered means/variances
    and ``-2 log L`` of ``z[1:]`` given the prior ``N(y0, q0)`` at ``times[0]``.
    """
    y, q = float(y0), float(q0)
    nus, svars, gains, ys, qs = [], [], [], [], []
    m2ll = 0.0
    for k in range(1, len(times)):
        y, q = ou_moments(y, q, theta, mu, sigma, times[k] - times[k - 1])
        nu = z[k] - y
        s = q + obs_var
        gain = q / s
        y = y + gain * nu
        q = q - gain * q
        nus.append(nu)
        svars.append(s)
        gains.append(gain)
        ys.append(y)
        qs.append(q)
        m2ll += math.log(2 * math.pi) + math.log(s) + nu * nu / s
    return dict(nu=np.array(nus), S=np.array(svars), K=np.array(gains),
                y=np.array(ys), Q=np.array(qs), q=m2ll)


def linear_moments_vanloan(A, a, G, y, Q, dt, expm):
    """Mean and covariance of ``dx = (A x + a) dt + noise`` with diffusion ``G = b b^T``.

    Uses the Van Loan block exponential; ``expm`` is supplied by the caller so
    this module stays dependency free.
    """
    d = A.shape[0]
    E = expm(A * dt)
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = A
    aug[:d, d] = a
    mean = (expm(aug * dt) @ np.append(y, 1.0))[:d]
    blk = np.block([[-A, G], [np.zeros((d, d)), A.T]])
    F = expm(blk * dt)
    cov = F[d:, d:].T @ F[:d, d:] + E @ Q @ E.T
    return mean, 0.5 * (cov + cov.T)


def grid_argmin(fun, lo, hi, n):
    grid = np.linspace(lo, hi, n)
    values = np.array([fun(v) for v in grid])
    return grid[int(np.argmin(values))], grid, values


def projected_quadratic_min(c, lo, hi):
    """Minimizer of a separable convex quadratic over a box is the clamped center."""
    return np.clip(c, lo, hi)


def uniform_mean_band(lo, hi, n, k=3.0):
    width = np.asarray(hi, float) - np.asarray(lo, float)
    centre = 0.5 * (np.asarray(lo, float) + np.asarray(hi, float))
    half = k * width / math.sqrt(12 * n)
    return centre - half, centre + half
