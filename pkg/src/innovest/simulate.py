"""Synthetic data: Euler-Maruyama paths on a fine grid, subsampling, noisy observations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .models import StateSpaceModel
from .rng import RngStream

DIVERGENCE_BOUND = 1e12


class SimulationDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"simulated state left the finite range at step {step}")
        self.step = step


class GridMismatch(ValueError):
    pass


@dataclass
class Trajectory:
    t0: float
    h: float
    states: np.ndarray
    n_clamped: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self.states))


@dataclass
class ObservationSeries:
    times: np.ndarray
    values: np.ndarray
    true_states: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if len(self.times) != len(self.values):
            raise ValueError("times and values lengths differ")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if self.true_states is not None:
            self.true_states = np.asarray(self.true_states, dtype=float)

    @property
    def N(self) -> int:
        """Number of observations after the initial one."""
        return len(self.times) - 1


_euler_cache: dict = {}


def _compiled_euler(model: StateSpaceModel):
    key = (model.drift, model.diffusion, model.m)
    if key not in _euler_cache:
        _euler_cache[key] = _kernels.build_euler_loop(model.drift, model.diffusion, model.m)
    return _euler_cache[key]


def simulate_path(model: StateSpaceModel, alpha, x0, t0: float, h: float, n_steps: int,
                  stream: RngStream) -> Trajectory:
    """Euler-Maruyama path ``x_{j+1} = x_j + f h + sum_i g_i sqrt(h) eta_ij``.

    All ``n_steps * m`` standard normals are drawn up front, step-major and
    channel-minor, so a path depends only on the stream state.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    alpha = np.asarray(alpha, dtype=float)
    x0 = np.asarray(x0, dtype=float).ravel()
    eta = stream.standard_normal((n_steps, model.m))
    states = np.empty((n_steps + 1, model.d))
    if model.compiled:
        failed = _compiled_euler(model)(x0, alpha, float(t0), float(h), eta, DIVERGENCE_BOUND, states)
        if failed >= 0:
            raise SimulationDivergence(int(failed))
    else:
        sqh = np.sqrt(h)
        x = x0.copy()
        states[0] = x
        for j in range(n_steps):
            t = t0 + j * h
            x = x + np.asarray(model.drift(t, x, alpha)) * h
            for i in range(model.m):
                x = x + np.asarray(model.diffusion(t, states[j], alpha, i)) * (sqh * eta[j, i])
            if not np.all(np.isfinite(x)) or np.any(np.abs(x) > DIVERGENCE_BOUND):
                raise SimulationDivergence(j + 1)
            states[j + 1] = x
    n_clamped = 0
    if model.in_domain is not None:
        n_clamped = int(np.count_nonzero(~model.in_domain(states)))
    return Trajectory(float(t0), float(h), states, n_clamped)


def subsample(traj: Trajectory, delta: float, N: int) -> np.ndarray:
    """States at ``t0 + k*delta``, ``k = 0..N``; ``delta`` must be a multiple of the fine step."""
    ratio = delta / traj.h
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * ratio:
        raise GridMismatch(f"observation interval {delta} is not a multiple of step {traj.h}")
    last = N * stride
    if last >= len(traj.states):
        raise IndexError(f"N*delta = {N * delta} exceeds the simulated span "
                         f"{(len(traj.states) - 1) * traj.h}")
    return traj.states[0:last + 1:stride].copy()


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    # eigen-based square root tolerates singular (e.g. zero) covariances
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def generate_observations(model: StateSpaceModel, states, times, stream: RngStream) -> ObservationSeries:
    """``z_k = h0(t_k, x_k) + extra(t_k, x_k, xi_k) + e_k``.

    Draw order: all ``e`` (``K x r``) first, then all ``xi`` when the model
    declares an extra noise term.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    times = np.asarray(times, dtype=float).ravel()
    if len(states) != len(times):
        raise ValueError("states and times lengths differ")
    K, r = len(times), model.r
    clean = np.array([np.asarray(model.obs_mean(t, x), dtype=float) for t, x in zip(times, states)])
    clean = clean.reshape(K, r)
    e = stream.standard_normal((K, r)) @ _cov_factor(model.obs_noise_cov).T
    z = clean + e
    if model.extra_obs_noise is not None:
        xi = stream.standard_normal((K, r)) * np.sqrt(model.extra_obs_noise_var)
        z = z + np.asarray(model.extra_obs_noise(times, states, xi)).reshape(K, r)
    return ObservationSeries(times, z, states.copy())


def synthesize(model: StateSpaceModel, alpha, x0, h: float, delta: float, N: int,
               stream: RngStream, t0: float = 0.0) -> tuple[Trajectory, ObservationSeries]:
    """Fine-grid path long enough for ``N`` observation gaps, then noisy observations.

    The path and the observation noise use two child streams split from ``stream``.
    """
    path_stream, obs_stream = stream.split(2)
    stride = int(round(delta / h))
    traj = simulate_path(model, alpha, x0, t0, h, max(N * stride, 1), path_stream)
    states = subsample(traj, delta, N)
    times = t0 + delta * np.arange(N + 1)
    return traj, generate_observations(model, states, times, obs_stream)
