"""Continuous-discrete state-space models and their local linearization.

A model is the SDE

    dx = f(t, x; alpha) dt + sum_i g_i(t, x; alpha) dw_i

observed at discrete times through ``z_k = h0(t_k, x(t_k)) + e_k`` with
``e_k ~ N(0, Sigma)``.  Callbacks use 0-based channel indices.

Built-in models compile their callbacks with numba, which lets the filter and
the simulator run their whole loop in compiled code.  Plain Python callbacks
work too and take the slower interpreted path.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher


class DomainError(ValueError):
    """A callback was evaluated outside its mathematical domain."""


class EvaluationError(RuntimeError):
    """A model callback returned non-finite values."""

    def __init__(self, message: str, t: float, x: np.ndarray):
        super().__init__(f"{message} at t={t!r}, x={np.asarray(x).tolist()!r}")
        self.t = t
        self.x = np.asarray(x)


@njit(cache=True)
def _zero_time_deriv(t, x, alpha):
    return np.zeros(x.shape[0])


@njit(cache=True)
def _zero_time_deriv_channel(t, x, alpha, i):
    return np.zeros(x.shape[0])


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Drift, diffusion and observation callbacks plus their dimensions.

    ``extra_obs_noise(t, x, xi)`` adds a state-dependent observation term used
    only when generating synthetic data; ``xi ~ N(0, extra_obs_noise_var)`` is
    r-dimensional.  ``in_domain(states)`` flags rows of an ``(n, d)`` array that
    lie inside the natural domain of the diffusion (used to count clamping).
    """

    name: str
    d: int
    m: int
    r: int
    p: int
    drift: Callable
    diffusion: Callable
    obs_mean: Callable
    obs_noise_cov: np.ndarray
    jac_drift: Optional[Callable] = None
    jac_diffusion: Optional[Callable] = None
    jac_obs: Optional[Callable] = None
    time_deriv_drift: Optional[Callable] = None
    time_deriv_diffusion: Optional[Callable] = None
    extra_obs_noise: Optional[Callable] = None
    extra_obs_noise_var: float = 0.0
    in_domain: Optional[Callable] = None
    param_names: tuple = ()

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.obs_noise_cov, dtype=float))
        if cov.shape != (self.r, self.r):
            raise ValueError(f"obs_noise_cov must be {self.r}x{self.r}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-14):
            raise ValueError("obs_noise_cov must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-14:
            raise ValueError("obs_noise_cov must be positive semidefinite")
        object.__setattr__(self, "obs_noise_cov", cov)
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"alpha{i + 1}" for i in range(self.p)))

    @property
    def compiled(self) -> bool:
        """True when every supplied callback is a numba dispatcher."""
        required = (self.drift, self.diffusion, self.obs_mean)
        optional = (self.jac_drift, self.jac_diffusion, self.jac_obs,
                    self.time_deriv_drift, self.time_deriv_diffusion)
        return (all(isinstance(cb, CPUDispatcher) for cb in required)
                and all(cb is None or isinstance(cb, CPUDispatcher) for cb in optional))


@dataclass(frozen=True, eq=False)
class ParameterBox:
    lo: np.ndarray
    hi: np.ndarray
    names: tuple = ()
    true_values: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have the same length")
        if np.any(lo > hi):
            raise ValueError(f"empty interval in box: lo={lo.tolist()} hi={hi.tolist()}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"alpha{i + 1}" for i in range(lo.size)))
        if self.true_values is not None:
            object.__setattr__(self, "true_values", np.asarray(self.true_values, dtype=float))

    @property
    def p(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    """A model, one observation series, a search box and the filter's initial moments."""

    model: StateSpaceModel
    observations: "ObservationSeries"  # noqa: F821  (defined in simulate)
    box: ParameterBox
    y0: np.ndarray
    Q0: np.ndarray
    initial_update: bool = False

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float).ravel()
        Q0 = np.atleast_2d(np.asarray(self.Q0, dtype=float))
        if y0.shape != (self.model.d,) or Q0.shape != (self.model.d, self.model.d):
            raise ValueError("y0/Q0 dimensions do not match the model")
        if not np.allclose(Q0, Q0.T, rtol=0, atol=1e-14) or np.linalg.eigvalsh(Q0).min() < -1e-14:
            raise ValueError("Q0 must be symmetric positive semidefinite")
        if self.box.p != self.model.p:
            raise ValueError("box dimension does not match the model parameter count")
        times = np.asarray(self.observations.times)
        if np.any(np.diff(times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "Q0", Q0)


@dataclass
class LinearizationCoefficients:
    """Frozen linearization of a model around ``(t_ref, y)``.

    Affine forcing terms are ``a(t) = a_const + a_slope (t - t_ref)`` and, per
    channel, ``b_i(t) = b_const[i] + b_slope[i] (t - t_ref)``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    a_const: np.ndarray
    a_slope: np.ndarray
    b_const: np.ndarray
    b_slope: np.ndarray
    t_ref: float = 0.0


def fd_step(x: np.ndarray) -> np.ndarray:
    return np.maximum(1e-6, 1e-6 * np.abs(x))


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Central finite-difference Jacobian with per-coordinate step ``max(1e-6, 1e-6|x_j|)``."""
    x = np.asarray(x, dtype=float)
    steps = fd_step(x)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = steps[j]
        cols.append((np.asarray(fun(x + e), dtype=float) - np.asarray(fun(x - e), dtype=float)) / (2 * steps[j]))
    return np.column_stack(cols)


def _checked(value, t, x, what):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"non-finite {what}", t, x)
    return value


def drift_jacobian(model: StateSpaceModel, t, x, alpha) -> np.ndarray:
    if model.jac_drift is not None:
        return np.asarray(model.jac_drift(t, x, alpha), dtype=float)
    return fd_jacobian(lambda v: model.drift(t, v, alpha), x)


def diffusion_jacobian(model: StateSpaceModel, t, x, alpha, i) -> np.ndarray:
    if model.jac_diffusion is not None:
        return np.asarray(model.jac_diffusion(t, x, alpha, i), dtype=float)
    return fd_jacobian(lambda v: model.diffusion(t, v, alpha, i), x)


def obs_jacobian(model: StateSpaceModel, t, x) -> np.ndarray:
    if model.jac_obs is not None:
        return np.atleast_2d(np.asarray(model.jac_obs(t, x), dtype=float))
    return np.atleast_2d(fd_jacobian(lambda v: model.obs_mean(t, v), x))


def jacobians(model: StateSpaceModel, t: float, x, alpha, *, finite_differences: bool = False
              ) -> LinearizationCoefficients:
    """Linearize the model at ``(t, x)``.

    Analytic Jacobians are used when the model provides them unless
    ``finite_differences`` is set.  Raises :class:`EvaluationError` on any
    non-finite callback output.
    """
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    d, m = model.d, model.m
    if finite_differences:
        A = fd_jacobian(lambda v: model.drift(t, v, alpha), x)
        B = np.array([fd_jacobian(lambda v, i=i: model.diffusion(t, v, alpha, i), x) for i in range(m)])
        C = np.atleast_2d(fd_jacobian(lambda v: model.obs_mean(t, v), x))
    else:
        A = drift_jacobian(model, t, x, alpha)
        B = np.array([diffusion_jacobian(model, t, x, alpha, i) for i in range(m)])
        C = obs_jacobian(model, t, x)
    f = _checked(model.drift(t, x, alpha), t, x, "drift")
    g = np.array([_checked(model.diffusion(t, x, alpha, i), t, x, "diffusion") for i in range(m)])
    dfds = (np.zeros(d) if model.time_deriv_drift is None
            else np.asarray(model.time_deriv_drift(t, x, alpha), dtype=float))
    dgds = (np.zeros((m, d)) if model.time_deriv_diffusion is None
            else np.array([model.time_deriv_diffusion(t, x, alpha, i) for i in range(m)], dtype=float))
    A = _checked(A.reshape(d, d), t, x, "drift Jacobian")
    B = _checked(B.reshape(m, d, d), t, x, "diffusion Jacobian")
    C = _checked(C.reshape(model.r, d), t, x, "observation Jacobian")
    return LinearizationCoefficients(
        A=A,
        B=B,
        C=C,
        a_const=f - A @ x,
        a_slope=_checked(dfds, t, x, "drift time derivative"),
        b_const=g - np.einsum("ijk,k->ij", B, x),
        b_slope=_checked(dgds, t, x, "diffusion time derivative"),
        t_ref=float(t),
    )


def jacobian_discrepancy(model: StateSpaceModel, t, x, alpha) -> float:
    """Largest elementwise relative gap between analytic and finite-difference Jacobians.

    Entries smaller than 1e-3 of their matrix's largest entry (or of 1) are
    measured against that floor instead of their own magnitude; finite
    differences cannot resolve them relatively.
    """
    analytic = jacobians(model, t, x, alpha)
    numeric = jacobians(model, t, x, alpha, finite_differences=True)
    worst = 0.0
    for a, b in ((analytic.A, numeric.A), (analytic.B, numeric.B), (analytic.C, numeric.C)):
        size = float(np.max(np.abs(a))) if a.size else 0.0
        scale = np.maximum(np.abs(a), 1e-3 * max(size, 1.0))
        worst = max(worst, float(np.max(np.abs(a - b) / scale)))
    return worst


# --- FitzHugh-Nagumo: stiff state equation, additive noise on x2 -----------------------

@njit(cache=True)
def _fhn_drift(t, x, a):
    return np.array([100.0 * (x[0] - x[0] ** 3 / 3.0 - x[1]), a[0] + a[1] * x[0]])


@njit(cache=True)
def _fhn_jac_drift(t, x, a):
    return np.array([[100.0 * (1.0 - x[0] ** 2), -100.0], [a[1], 0.0]])


@njit(cache=True)
def _fhn_diffusion(t, x, a, i):
    return np.array([0.0, a[2]])


@njit(cache=True)
def _fhn_jac_diffusion(t, x, a, i):
    return np.zeros((2, 2))


@njit(cache=True)
def _identity2(t, x):
    return x.copy()


@njit(cache=True)
def _jac_identity2(t, x):
    return np.eye(2)


def fhn_model() -> StateSpaceModel:
    """Stochastic FitzHugh-Nagumo model, both states observed with variance 1e-6."""
    return StateSpaceModel(
        name="fhn", d=2, m=1, r=2, p=3,
        drift=_fhn_drift, diffusion=_fhn_diffusion, obs_mean=_identity2,
        obs_noise_cov=1e-6 * np.eye(2),
        jac_drift=_fhn_jac_drift, jac_diffusion=_fhn_jac_diffusion, jac_obs=_jac_identity2,
        time_deriv_drift=_zero_time_deriv, time_deriv_diffusion=_zero_time_deriv_channel,
        param_names=("alpha1", "alpha2", "alpha3"),
    )


# --- nonlinear model with multiplicative noise ------------------------------------------

def sqrt_diffusion_raw(x1: float, scale: float) -> float:
    """``scale * sqrt(x1)`` without clamping; negative ``x1`` is a domain error."""
    if x1 < 0:
        raise DomainError(f"sqrt diffusion evaluated at x1={x1!r} < 0")
    return scale * math.sqrt(x1)


@njit(cache=True)
def _mult_drift(t, x, a):
    return np.array([a[0] + a[1] * x[0], a[3] * x[1] ** 2])


@njit(cache=True)
def _mult_jac_drift(t, x, a):
    return np.array([[a[1], 0.0], [0.0, 2.0 * a[3] * x[1]]])


@njit(cache=True)
def _mult_diffusion(t, x, a, i):
    # sqrt is clamped at zero: discretized paths may dip below it
    if i == 0:
        return np.array([a[2] * math.sqrt(max(x[0], 0.0)), 0.0])
    return np.array([0.0, a[4] * x[0] ** 2])


@njit(cache=True)
def _mult_jac_diffusion(t, x, a, i):
    out = np.zeros((2, 2))
    if i == 0:
        if x[0] > 0.0:
            out[0, 0] = a[2] / (2.0 * math.sqrt(x[0]))
    else:
        out[1, 0] = 2.0 * a[4] * x[0]
    return out


@njit(cache=True)
def _mult_obs(t, x):
    return np.array([x[1] - 0.001 * x[1] ** 3])


@njit(cache=True)
def _mult_jac_obs(t, x):
    return np.array([[0.0, 1.0 - 0.003 * x[1] ** 2]])


def _mult_extra_noise(t, x, xi):
    x = np.asarray(x, dtype=float)
    return (x[..., 1] - 0.01 * x[..., 1] ** 2)[..., None] * np.asarray(xi, dtype=float)


def _mult_in_domain(states):
    return np.asarray(states)[..., 0] >= 0.0


def multiplicative_model() -> StateSpaceModel:
    """Two-state model with square-root and quadratic multiplicative noise, scalar observation.

    The filter sees only ``h0(x) = x2 - 0.001 x2^3`` with variance 0.01; the
    state-dependent ``(x2 - 0.01 x2^2) xi`` term, ``xi ~ N(0, 0.01)``, enters
    synthetic data only.
    """
    return StateSpaceModel(
        name="mult", d=2, m=2, r=1, p=5,
        drift=_mult_drift, diffusion=_mult_diffusion, obs_mean=_mult_obs,
        obs_noise_cov=np.array([[0.01]]),
        jac_drift=_mult_jac_drift, jac_diffusion=_mult_jac_diffusion, jac_obs=_mult_jac_obs,
        time_deriv_drift=_zero_time_deriv, time_deriv_diffusion=_zero_time_deriv_channel,
        extra_obs_noise=_mult_extra_noise, extra_obs_noise_var=0.01,
        in_domain=_mult_in_domain,
        param_names=("alpha1", "alpha2", "alpha3", "alpha4", "alpha5"),
    )


# --- scalar Ornstein-Uhlenbeck, the linear reference model -----------------------------

@functools.lru_cache(maxsize=None)
def ou_model(mu: float = 0.5, sigma: float = 0.3, obs_var: float = 0.01) -> StateSpaceModel:
    """``dx = theta (mu - x) dt + sigma dw`` observed as ``z = x + e``; ``alpha = (theta,)``.

    Instances are cached per argument tuple so the compiled callbacks (and the
    filter loop built on them) are reused.
    """
    mu = float(mu)
    sigma = float(sigma)

    @njit
    def drift(t, x, a):
        return np.array([a[0] * (mu - x[0])])

    @njit
    def jac_drift(t, x, a):
        return np.array([[-a[0]]])

    @njit
    def diffusion(t, x, a, i):
        return np.array([sigma])

    @njit
    def jac_diffusion(t, x, a, i):
        return np.zeros((1, 1))

    @njit
    def obs(t, x):
        return x.copy()

    @njit
    def jac_obs(t, x):
        return np.eye(1)

    return StateSpaceModel(
        name="ou", d=1, m=1, r=1, p=1,
        drift=drift, diffusion=diffusion, obs_mean=obs,
        obs_noise_cov=np.array([[obs_var]]),
        jac_drift=jac_drift, jac_diffusion=jac_diffusion, jac_obs=jac_obs,
        time_deriv_drift=_zero_time_deriv, time_deriv_diffusion=_zero_time_deriv_channel,
        param_names=("theta",),
    )


BUILTIN_MODELS = {"fhn": fhn_model, "mult": multiplicative_model, "ou": ou_model}


def get_model(name: str) -> StateSpaceModel:
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None


def as_box(lo: Sequence[float], hi: Sequence[float], names=(), true_values=None) -> ParameterBox:
    return ParameterBox(np.asarray(lo, float), np.asarray(hi, float), tuple(names), true_values)
