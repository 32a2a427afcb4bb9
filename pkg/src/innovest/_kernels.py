"""Compiled inner loops for moment propagation, filtering and simulation.

The moment equations of the linearized SDE are integrated in second-moment
form: with ``S = Q + y y^T`` the pair ``(y, S)`` obeys a *linear* ODE whose
forcing is polynomial in the elapsed time ``s``.  Augmenting the state with
``u = s*y``, ``s``, ``s**2`` and the constant ``1`` makes the system linear and
homogeneous, ``z' = L z``.  Classical RK4 with step ``h`` on such a system is
exactly ``z <- P(hL) z`` with ``P`` the degree-4 Taylor polynomial, so ``n``
equal substeps are ``P(hL)**n`` and are evaluated by binary powering.

Status codes returned by the loops are mapped to messages in ``STATUS``.
"""

import math

import numpy as np
from numba import njit

OK = 0
NONFINITE_LINEARIZATION = 1
PREDICTION_DIVERGENCE = 2
NON_PD_INNOVATION = 3
STIFFNESS_LIMIT = 4
NONFINITE_OBSERVATION_MAP = 5

STATUS = {
    OK: "ok",
    NONFINITE_LINEARIZATION: "non-finite model evaluation during linearization",
    PREDICTION_DIVERGENCE: "non-finite moments during prediction",
    NON_PD_INNOVATION: "innovation covariance not positive definite",
    STIFFNESS_LIMIT: "substep count required for stability exceeds limit",
    NONFINITE_OBSERVATION_MAP: "non-finite observation map evaluation",
}

# Substep count is raised until dt * stiffness / n <= STABLE_Z.
STABLE_Z = 0.25
MAX_SUBSTEPS = 1 << 26
# smallest linearization window, as a fraction of the observation gap
MIN_WINDOW_FRACTION = 1.0 / 4096


@njit(cache=True)
def _all_finite(a):
    for v in a.ravel():
        if not np.isfinite(v):
            return False
    return True


@njit(cache=True)
def _matmul(a, b, out):
    n = a.shape[0]
    k = a.shape[1]
    p = b.shape[1]
    for i in range(n):
        for j in range(p):
            out[i, j] = 0.0
        for l in range(k):
            ail = a[i, l]
            # generators are sparse; skipping zeros roughly halves the work
            if ail != 0.0:
                for j in range(p):
                    out[i, j] += ail * b[l, j]


@njit(cache=True)
def _has_slopes(a_slope, b_slope):
    for v in a_slope:
        if v != 0.0:
            return True
    for v in b_slope.ravel():
        if v != 0.0:
            return True
    return False


@njit(cache=True)
def build_generator(A, B, a_const, a_slope, b_const, b_slope, timed):
    """Matrix ``L`` of the augmented linear moment system."""
    d = A.shape[0]
    m = B.shape[0]
    iu = d + d * d
    if timed:
        i_s = iu + d
        i_s2 = i_s + 1
        i_one = i_s + 2
    else:
        i_s = -1
        i_s2 = -1
        i_one = iu
    n = i_one + 1
    L = np.zeros((n, n))

    for i in range(d):
        for j in range(d):
            L[i, j] = A[i, j]
        L[i, i_one] = a_const[i]
        if timed:
            L[i, i_s] = a_slope[i]
            # u' = y + A u + a_const s + a_slope s^2
            L[iu + i, i] = 1.0
            for j in range(d):
                L[iu + i, iu + j] = A[i, j]
            L[iu + i, i_s] = a_const[i]
            L[iu + i, i_s2] = a_slope[i]

    for i in range(d):
        for j in range(d):
            row = d + i * d + j
            for k in range(d):
                L[row, d + k * d + j] += A[i, k]
                L[row, d + i * d + k] += A[j, k]
            L[row, j] += a_const[i]
            L[row, i] += a_const[j]
            if timed:
                L[row, iu + j] += a_slope[i]
                L[row, iu + i] += a_slope[j]
            for c in range(m):
                for k in range(d):
                    for l in range(d):
                        L[row, d + k * d + l] += B[c, i, k] * B[c, j, l]
                    L[row, k] += B[c, i, k] * b_const[c, j] + b_const[c, i] * B[c, j, k]
                    if timed:
                        L[row, iu + k] += B[c, i, k] * b_slope[c, j] + b_slope[c, i] * B[c, j, k]
                L[row, i_one] += b_const[c, i] * b_const[c, j]
                if timed:
                    L[row, i_s] += b_const[c, i] * b_slope[c, j] + b_slope[c, i] * b_const[c, j]
                    L[row, i_s2] += b_slope[c, i] * b_slope[c, j]

    if timed:
        L[i_s, i_one] = 1.0
        L[i_s2, i_s] = 2.0
    return L


@njit(cache=True)
def stiffness_bound(A, B):
    """Infinity-norm bound on the rate of the ``(y, S)`` moment system."""
    d = A.shape[0]
    norm_a = 0.0
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += abs(A[i, j])
        norm_a = max(norm_a, acc)
    rate = 2.0 * norm_a
    for c in range(B.shape[0]):
        norm_b = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += abs(B[c, i, j])
            norm_b = max(norm_b, acc)
        rate += norm_b * norm_b
    return rate


@njit(cache=True)
def effective_substeps(A, B, dt, substeps):
    """Requested substeps, raised so that each RK4 step stays well inside the stability region."""
    rate = stiffness_bound(A, B) + 1.0
    if not np.isfinite(rate):
        return -1
    need = dt * rate / STABLE_Z
    if need > MAX_SUBSTEPS:
        return -1
    n = int(math.ceil(need))
    return max(substeps, n)


@njit(cache=True)
def rk4_propagator(L, h, n):
    """``P(hL)**n`` where ``P`` is the one-step RK4 amplification polynomial."""
    size = L.shape[0]
    acc = np.empty((size, size))
    tmp = np.empty((size, size))
    # Horner: I + hL (I + hL/2 (I + hL/3 (I + hL/4)))
    for i in range(size):
        for j in range(size):
            acc[i, j] = L[i, j] * (h / 4.0)
        acc[i, i] += 1.0
    for c in (3.0, 2.0, 1.0):
        _matmul(L, acc, tmp)
        for i in range(size):
            for j in range(size):
                acc[i, j] = tmp[i, j] * (h / c)
            acc[i, i] += 1.0

    step = acc
    result = np.empty((size, size))
    first = True
    while n > 0:
        if n & 1:
            if first:
                result[:, :] = step
                first = False
            else:
                _matmul(result, step, tmp)
                result[:, :] = tmp
        n >>= 1
        if n > 0:
            _matmul(step, step, tmp)
            step[:, :] = tmp
    return result


@njit(cache=True)
def predict_moments(y, Q, A, B, a_const, a_slope, b_const, b_slope, dt, substeps):
    """Integrate the linearized mean/covariance ODEs over ``dt``.

    Returns ``(y, Q, n_used, status)``.  ``n_used`` is the number of RK4
    substeps actually taken (``substeps`` or more when the gap is stiff).
    """
    d = y.shape[0]
    if dt == 0.0:
        return y.copy(), Q.copy(), 0, OK
    n = effective_substeps(A, B, dt, substeps)
    if n < 0:
        return y.copy(), Q.copy(), 0, STIFFNESS_LIMIT
    timed = _has_slopes(a_slope, b_slope)
    L = build_generator(A, B, a_const, a_slope, b_const, b_slope, timed)
    P = rk4_propagator(L, dt / n, n)

    size = L.shape[0]
    z = np.zeros(size)
    for i in range(d):
        z[i] = y[i]
        for j in range(d):
            z[d + i * d + j] = Q[i, j] + y[i] * y[j]
    z[size - 1] = 1.0

    y_new = np.empty(d)
    Q_new = np.empty((d, d))
    for i in range(d):
        acc = 0.0
        for k in range(size):
            acc += P[i, k] * z[k]
        y_new[i] = acc
    for i in range(d):
        for j in range(d):
            row = d + i * d + j
            acc = 0.0
            for k in range(size):
                acc += P[row, k] * z[k]
            Q_new[i, j] = acc - y_new[i] * y_new[j]
    for i in range(d):
        for j in range(i + 1, d):
            v = 0.5 * (Q_new[i, j] + Q_new[j, i])
            Q_new[i, j] = v
            Q_new[j, i] = v
    if not (_all_finite(y_new) and _all_finite(Q_new)):
        return y_new, Q_new, n, PREDICTION_DIVERGENCE
    return y_new, Q_new, n, OK


@njit(cache=True)
def predict_mean(y, A, a_const, a_slope, dt, substeps):
    """Mean part of :func:`predict_moments` alone (same RK4 scheme, ``[y, s, 1]`` system)."""
    d = y.shape[0]
    rate = 0.0
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += abs(A[i, j])
        rate = max(rate, acc)
    need = dt * (rate + 1.0) / STABLE_Z
    if not np.isfinite(need) or need > MAX_SUBSTEPS:
        return y.copy(), False
    n = max(substeps, int(math.ceil(need)))
    size = d + 2
    L = np.zeros((size, size))
    for i in range(d):
        for j in range(d):
            L[i, j] = A[i, j]
        L[i, d] = a_slope[i]
        L[i, d + 1] = a_const[i]
    L[d, d + 1] = 1.0
    P = rk4_propagator(L, dt / n, n)
    out = np.empty(d)
    for i in range(d):
        acc = P[i, d + 1]
        for j in range(d):
            acc += P[i, j] * y[j]
        out[i] = acc
    return out, _all_finite(out)


@njit(cache=True)
def cholesky(a):
    """Lower Cholesky factor; second value is False when ``a`` is not positive definite."""
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        acc = a[j, j]
        for k in range(j):
            acc -= low[j, k] * low[j, k]
        if not (acc > 0.0) or not np.isfinite(acc):
            return low, False
        low[j, j] = math.sqrt(acc)
        for i in range(j + 1, n):
            acc = a[i, j]
            for k in range(j):
                acc -= low[i, k] * low[j, k]
            low[i, j] = acc / low[j, j]
    return low, True


@njit(cache=True)
def cho_solve(low, b):
    """Solve ``(low low^T) x = b`` for a 2-d right-hand side."""
    n = low.shape[0]
    x = b.copy()
    for col in range(x.shape[1]):
        for i in range(n):
            acc = x[i, col]
            for k in range(i):
                acc -= low[i, k] * x[k, col]
            x[i, col] = acc / low[i, i]
        for i in range(n - 1, -1, -1):
            acc = x[i, col]
            for k in range(i + 1, n):
                acc -= low[k, i] * x[k, col]
            x[i, col] = acc / low[i, i]
    return x


@njit(cache=True)
def innovation_term(low, nu):
    """``ln det(S) + nu^T S^{-1} nu`` from the Cholesky factor of ``S``."""
    n = low.shape[0]
    logdet = 0.0
    for i in range(n):
        logdet += 2.0 * math.log(low[i, i])
    w = nu.copy()
    for i in range(n):
        acc = w[i]
        for k in range(i):
            acc -= low[i, k] * w[k]
        w[i] = acc / low[i, i]
    quad = 0.0
    for i in range(n):
        quad += w[i] * w[i]
    return logdet + quad


@njit(cache=True)
def innovation_cov(Q, C, Sigma):
    r = C.shape[0]
    CQ = np.empty((r, Q.shape[0]))
    _matmul(C, Q, CQ)
    S = np.empty((r, r))
    _matmul(CQ, C.T.copy(), S)
    for i in range(r):
        for j in range(r):
            S[i, j] += Sigma[i, j]
    for i in range(r):
        for j in range(i + 1, r):
            v = 0.5 * (S[i, j] + S[j, i])
            S[i, j] = v
            S[j, i] = v
    return S


@njit(cache=True)
def kalman_update(y, Q, C, nu, low):
    """Posterior moments with gain ``K = Q C^T S^{-1}`` obtained by a Cholesky solve."""
    d = y.shape[0]
    r = C.shape[0]
    CQ = np.empty((r, d))
    _matmul(C, Q, CQ)
    # S K^T = C Q  (Q symmetric)
    Kt = cho_solve(low, CQ)
    y_new = y.copy()
    Q_new = Q.copy()
    for i in range(d):
        acc = 0.0
        for k in range(r):
            acc += Kt[k, i] * nu[k]
        y_new[i] += acc
        for j in range(d):
            acc = 0.0
            for k in range(r):
                acc += Kt[k, i] * CQ[k, j]
            Q_new[i, j] -= acc
    for i in range(d):
        for j in range(i + 1, d):
            v = 0.5 * (Q_new[i, j] + Q_new[j, i])
            Q_new[i, j] = v
            Q_new[j, i] = v
    return y_new, Q_new


def build_filter_loop(drift, jac_drift, diffusion, jac_diffusion, obs_mean, jac_obs,
                      time_deriv_drift, time_deriv_diffusion, m):
    """Compile the whole filter recursion for one set of compiled model callbacks."""

    @njit
    def linearize(t, y, alpha, d):
        f = drift(t, y, alpha)
        A = jac_drift(t, y, alpha)
        a_slope = time_deriv_drift(t, y, alpha)
        a_const = f - A @ y
        B = np.empty((m, d, d))
        b_const = np.empty((m, d))
        b_slope = np.empty((m, d))
        for c in range(m):
            g = diffusion(t, y, alpha, c)
            Bc = jac_diffusion(t, y, alpha, c)
            B[c] = Bc
            b_const[c] = g - Bc @ y
            b_slope[c] = time_deriv_diffusion(t, y, alpha, c)
        ok = (_all_finite(A) and _all_finite(a_const) and _all_finite(a_slope)
              and _all_finite(B) and _all_finite(b_const) and _all_finite(b_slope))
        return A, B, a_const, a_slope, b_const, b_slope, ok

    @njit
    def run(times, values, y0, Q0, alpha, Sigma, substeps, lin_tol, initial_update,
            out_nu, out_cov, out_y, out_Q):
        d = y0.shape[0]
        y = y0.copy()
        Q = Q0.copy()
        t0 = times[0]
        if initial_update:
            C = jac_obs(t0, y)
            hy = obs_mean(t0, y)
            if not (_all_finite(C) and _all_finite(hy)):
                return NONFINITE_OBSERVATION_MAP, 0, 0.0
            S = innovation_cov(Q, C, Sigma)
            low, ok = cholesky(S)
            if not ok:
                return NON_PD_INNOVATION, 0, 0.0
            y, Q = kalman_update(y, Q, C, values[0] - hy, low)
        total = 0.0
        n_windows = 0
        n_obs = times.shape[0] - 1
        for k in range(n_obs):
            t = times[k]
            A, B, a_const, a_slope, b_const, b_slope, ok = linearize(t, y, alpha, d)
            if not ok:
                return NONFINITE_LINEARIZATION, k, total
            C = jac_obs(t, y)
            if not _all_finite(C):
                return NONFINITE_OBSERVATION_MAP, k, total
            t_end = times[k + 1]
            tau = t
            w = t_end - t
            w_min = (t_end - t) * MIN_WINDOW_FRACTION
            first = True
            while tau < t_end:
                if not first:
                    A, B, a_const, a_slope, b_const, b_slope, ok = linearize(tau, y, alpha, d)
                    if not ok:
                        return NONFINITE_LINEARIZATION, k, total
                first = False
                last = False
                grow = 2.0
                while True:
                    if tau + w >= t_end or t_end - (tau + w) < 1e-12 * (t_end - t):
                        w = t_end - tau
                        last = True
                    if lin_tol <= 0.0:
                        break
                    # linearization defect of the drift at the predicted window end
                    y_end, ok = predict_mean(y, A, a_const, a_slope, w, substeps)
                    err = np.inf
                    if ok:
                        f_end = drift(tau + w, y_end, alpha)
                        err = 0.0
                        for i in range(d):
                            lin = a_const[i] + a_slope[i] * w
                            for j in range(d):
                                lin += A[i, j] * y_end[j]
                            scale = lin_tol * (1.0 + max(abs(y_end[i]), abs(y[i])))
                            err = max(err, 0.5 * w * abs(f_end[i] - lin) / scale)
                        if not np.isfinite(err):
                            err = np.inf
                    if err <= 1.0:
                        grow = 4.0 if err == 0.0 else min(4.0, 0.9 * err ** (-1.0 / 3.0))
                        break
                    if w <= w_min:
                        break
                    shrink = 0.2 if not np.isfinite(err) else max(0.2, 0.9 * err ** (-1.0 / 3.0))
                    w = max(w * shrink, w_min)
                    last = False
                y, Q, _, status = predict_moments(y, Q, A, B, a_const, a_slope, b_const, b_slope,
                                                  w, substeps)
                if status != OK:
                    return status, k, total
                n_windows += 1
                if last:
                    break
                tau += w
                w *= grow
            hy = obs_mean(times[k + 1], y)
            if not _all_finite(hy):
                return NONFINITE_OBSERVATION_MAP, k, total
            nu = values[k + 1] - hy
            S = innovation_cov(Q, C, Sigma)
            low, ok = cholesky(S)
            if not ok:
                return NON_PD_INNOVATION, k, total
            total += innovation_term(low, nu)
            y, Q = kalman_update(y, Q, C, nu, low)
            out_nu[k] = nu
            out_cov[k] = S
            out_y[k] = y
            out_Q[k] = Q
        return OK, n_windows, total

    return run


def build_euler_loop(drift, diffusion, m):
    """Compile the Euler-Maruyama recursion for compiled drift/diffusion callbacks."""

    @njit
    def run(x0, alpha, t0, h, eta, bound, out):
        n_steps = eta.shape[0]
        d = x0.shape[0]
        sqh = math.sqrt(h)
        x = x0.copy()
        out[0] = x
        for j in range(n_steps):
            t = t0 + j * h
            f = drift(t, x, alpha)
            x_new = x + f * h
            for c in range(m):
                x_new += diffusion(t, x, alpha, c) * (sqh * eta[j, c])
            for i in range(d):
                v = x_new[i]
                if not np.isfinite(v) or abs(v) > bound:
                    return j + 1
            x = x_new
            out[j + 1] = x
        return -1

    return run
