"""Continuous-discrete Local Linearization filter.

Between observations the model is linearized and the resulting linear moment
equations are integrated with fixed-step RK4 (see ``_kernels`` for how the
substeps are evaluated).  With ``lin_tol = 0`` one linearization at the last
filtered mean covers the whole gap.  With ``lin_tol > 0`` the gap is split
into windows, each linearized at its own starting mean; a window is accepted
when the drift linearization error at its predicted end is below
``lin_tol * (1 + |y|)`` and the next window grows or shrinks accordingly.
Linear models are unaffected by the split.

At each observation the innovation, its covariance, the gain and the
posterior moments follow the usual Kalman algebra with the observation
Jacobian taken at the filtered mean of the gap start.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .models import (EstimationProblem, EvaluationError, LinearizationCoefficients,
                     StateSpaceModel, jacobians, _zero_time_deriv, _zero_time_deriv_channel)

DEFAULT_SUBSTEPS = 64
# fitness reported for any failed run; ranks below every finite fitness seen in practice
PENALTY = 1e12

__all__ = ["FilterState", "FilterRun", "LinearizationCoefficients", "PredictionDivergence",
           "NonPositiveDefinite", "PENALTY", "predict", "innovate", "update", "run_filter", "DEFAULT_SUBSTEPS"]


class PredictionDivergence(RuntimeError):
    def __init__(self, message: str, substeps: int = 0):
        super().__init__(message)
        self.substeps = substeps


class NonPositiveDefinite(np.linalg.LinAlgError):
    pass


@dataclass
class FilterState:
    t: float
    y: np.ndarray
    Q: np.ndarray


@dataclass
class FilterRun:
    times: np.ndarray
    innovations: np.ndarray
    innovation_covs: np.ndarray
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    fitness: float
    status: str = "ok"
    # innovation terms accumulated before a failure (== N for successful runs)
    n_used: int = 0
    failed_step: Optional[int] = None
    # linearization windows used across all gaps
    n_windows: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def predict(state: FilterState, coeffs: LinearizationCoefficients, dt: float,
            substeps: int = DEFAULT_SUBSTEPS) -> FilterState:
    """Propagate ``(y, Q)`` over ``[state.t, state.t + dt]``.

    ``substeps`` is a minimum: stiff gaps use more so every RK4 step stays in
    the stability region.  Raises :class:`PredictionDivergence` on non-finite
    moments.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    if dt == 0:
        return FilterState(state.t, state.y.copy(), state.Q.copy())
    # forcing is referenced to the linearization time
    offset = state.t - coeffs.t_ref
    a_const = coeffs.a_const + coeffs.a_slope * offset
    b_const = coeffs.b_const + coeffs.b_slope * offset
    y, Q, n_used, status = _kernels.predict_moments(
        np.asarray(state.y, float), np.asarray(state.Q, float), coeffs.A,
        np.asarray(coeffs.B, float).reshape(-1, len(state.y), len(state.y)),
        a_const, coeffs.a_slope, np.asarray(b_const, float).reshape(coeffs.B.shape[0], -1),
        np.asarray(coeffs.b_slope, float).reshape(coeffs.B.shape[0], -1), float(dt), int(substeps))
    if status != _kernels.OK:
        raise PredictionDivergence(_kernels.STATUS[status], n_used)
    return FilterState(state.t + dt, y, Q)


def innovate(pred: FilterState, model: StateSpaceModel, coeffs: LinearizationCoefficients, z):
    """Innovation ``z - h0(t, y)`` and its covariance ``C Q C^T + Sigma``."""
    hy = np.asarray(model.obs_mean(pred.t, pred.y), dtype=float).ravel()
    if not np.all(np.isfinite(hy)):
        raise EvaluationError("non-finite observation map", pred.t, pred.y)
    nu = np.asarray(z, dtype=float).ravel() - hy
    cov = _kernels.innovation_cov(pred.Q, coeffs.C, model.obs_noise_cov)
    return nu, cov


def update(pred: FilterState, coeffs: LinearizationCoefficients, nu, cov) -> FilterState:
    """Posterior moments; the gain comes from a Cholesky solve, never an inverse."""
    low, ok = _kernels.cholesky(np.asarray(cov, dtype=float))
    if not ok:
        raise NonPositiveDefinite("innovation covariance is not positive definite")
    y, Q = _kernels.kalman_update(pred.y, pred.Q, coeffs.C, np.asarray(nu, float), low)
    return FilterState(pred.t, y, Q)


def _empty_run(times, d, r, N):
    return (np.full((N, r), np.nan), np.full((N, r, r), np.nan),
            np.full((N, d), np.nan), np.full((N, d, d), np.nan))


def _window_defect(model, alpha, state, coeffs, w, substeps, lin_tol):
    """Scaled drift linearization defect at the end of a trial window (``inf`` on failure)."""
    offset = state.t - coeffs.t_ref
    a_const = coeffs.a_const + coeffs.a_slope * offset
    y_end, ok = _kernels.predict_mean(state.y, coeffs.A, a_const, coeffs.a_slope, float(w), int(substeps))
    if not ok:
        return np.inf
    f_end = np.asarray(model.drift(state.t + w, y_end, alpha), dtype=float)
    lin = a_const + coeffs.a_slope * w + coeffs.A @ y_end
    scale = lin_tol * (1.0 + np.maximum(np.abs(y_end), np.abs(state.y)))
    err = float(np.max(0.5 * w * np.abs(f_end - lin) / scale))
    return err if np.isfinite(err) else np.inf


def _predict_gap(model, alpha, state, coeffs, t_end, substeps, lin_tol):
    """Python mirror of the compiled gap loop; returns the predicted state and the window count."""
    t = state.t
    gap = t_end - t
    w, w_min = gap, gap * _kernels.MIN_WINDOW_FRACTION
    n_windows = 0
    first = True
    while state.t < t_end:
        if not first:
            coeffs = jacobians(model, state.t, state.y, alpha)
        first = False
        last = False
        grow = 2.0
        while True:
            if state.t + w >= t_end or t_end - (state.t + w) < 1e-12 * gap:
                w = t_end - state.t
                last = True
            if lin_tol <= 0.0:
                break
            err = _window_defect(model, alpha, state, coeffs, w, substeps, lin_tol)
            if err <= 1.0:
                grow = 4.0 if err == 0.0 else min(4.0, 0.9 * err ** (-1.0 / 3.0))
                break
            if w <= w_min:
                break
            shrink = 0.2 if not np.isfinite(err) else max(0.2, 0.9 * err ** (-1.0 / 3.0))
            w = max(w * shrink, w_min)
            last = False
        state = predict(state, coeffs, w, substeps)
        n_windows += 1
        if last:
            state = FilterState(t_end, state.y, state.Q)
            break
        w *= grow
    return state, n_windows


def _run_interpreted(problem: EstimationProblem, alpha: np.ndarray, substeps: int,
                     lin_tol: float) -> FilterRun:
    model = problem.model
    obs = problem.observations
    times, values = obs.times, obs.values
    N = len(times) - 1
    nus, covs, ys, Qs = _empty_run(times, model.d, model.r, N)
    state = FilterState(times[0], problem.y0.copy(), problem.Q0.copy())
    total = 0.0
    n_windows = 0
    k = 0
    try:
        if problem.initial_update:
            coeffs = jacobians(model, times[0], state.y, alpha)
            nu, cov = innovate(state, model, coeffs, values[0])
            state = update(state, coeffs, nu, cov)
        for k in range(N):
            coeffs = jacobians(model, times[k], state.y, alpha)
            pred, used = _predict_gap(model, alpha, state, coeffs, times[k + 1], substeps, lin_tol)
            n_windows += used
            # C stays at the filtered point of the gap start
            nu, cov = innovate(pred, model, coeffs, values[k + 1])
            low, ok = _kernels.cholesky(cov)
            if not ok:
                raise NonPositiveDefinite("innovation covariance is not positive definite")
            total += _kernels.innovation_term(low, nu)
            state = update(pred, coeffs, nu, cov)
            nus[k], covs[k], ys[k], Qs[k] = nu, cov, state.y, state.Q
    except (EvaluationError, PredictionDivergence, NonPositiveDefinite) as exc:
        return FilterRun(times[1:], nus, covs, ys, Qs, PENALTY, f"penalized: {exc}", k, k)
    return FilterRun(times[1:], nus, covs, ys, Qs, _with_constant(total, N, model.r),
                     n_used=N, n_windows=n_windows)


def _with_constant(total: float, N: int, r: int) -> float:
    fitness = N * r * np.log(2 * np.pi) + total
    # overflowed sums are failures too
    return float(fitness) if np.isfinite(fitness) else PENALTY


_loop_cache: dict = {}


def _compiled_loop(model: StateSpaceModel):
    key = (model.drift, model.jac_drift, model.diffusion, model.jac_diffusion, model.obs_mean,
           model.jac_obs, model.time_deriv_drift, model.time_deriv_diffusion, model.m)
    if key not in _loop_cache:
        _loop_cache[key] = _kernels.build_filter_loop(
            model.drift, model.jac_drift, model.diffusion, model.jac_diffusion,
            model.obs_mean, model.jac_obs,
            model.time_deriv_drift or _zero_time_deriv,
            model.time_deriv_diffusion or _zero_time_deriv_channel, model.m)
    return _loop_cache[key]


def _has_analytic_jacobians(model: StateSpaceModel) -> bool:
    return None not in (model.jac_drift, model.jac_diffusion, model.jac_obs)


def run_filter(problem: EstimationProblem, alpha, substeps: int = DEFAULT_SUBSTEPS,
               engine: str = "auto", lin_tol: float = 0.0) -> FilterRun:
    """Filter the whole observation series at parameter ``alpha``.

    Never raises for numerical trouble: failures come back as a penalized
    :class:`FilterRun` carrying the partial results and the failing gap index.
    ``engine`` is ``"compiled"``, ``"python"`` or ``"auto"`` (compiled when
    the model's callbacks allow it).
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != problem.model.p:
        raise ValueError(f"expected {problem.model.p} parameters, got {alpha.size}")
    model = problem.model
    use_compiled = engine == "compiled" or (
        engine == "auto" and model.compiled and _has_analytic_jacobians(model))
    if engine not in ("auto", "compiled", "python"):
        raise ValueError(f"unknown engine {engine!r}")
    if not use_compiled:
        return _run_interpreted(problem, alpha, substeps, float(lin_tol))
    if not (model.compiled and _has_analytic_jacobians(model)):
        raise ValueError("compiled engine needs numba callbacks and analytic Jacobians")

    obs = problem.observations
    times, values = obs.times, obs.values
    N = len(times) - 1
    nus, covs, ys, Qs = _empty_run(times, model.d, model.r, N)
    status, step, total = _compiled_loop(model)(
        times, values, problem.y0, problem.Q0, alpha, model.obs_noise_cov, int(substeps),
        float(lin_tol), bool(problem.initial_update), nus, covs, ys, Qs)
    if status != _kernels.OK:
        return FilterRun(times[1:], nus, covs, ys, Qs, PENALTY,
                         f"penalized: {_kernels.STATUS[status]}", int(step), int(step))
    run = FilterRun(times[1:], nus, covs, ys, Qs, _with_constant(total, N, model.r), n_used=N)
    run.n_windows = int(step)
    return run
