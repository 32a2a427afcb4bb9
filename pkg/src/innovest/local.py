"""Box-constrained Nelder-Mead and its compositions with UMDAc.

Every trial point (reflection, expansion, contraction, shrink) is projected
componentwise onto the box before it is evaluated, so the simplex never leaves
the search region.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .llfilter import DEFAULT_SUBSTEPS, PENALTY
from .models import ParameterBox
from .objective import DEFAULT_LIN_TOL, as_objective
from .rng import RngStream
from .umdac import EstimationResult, UmdacConfig, umdac_minimize

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5
INITIAL_EDGE = 0.05

__all__ = ["LocalConfig", "nelder_mead", "local_minimize", "refined_estimate", "random_start"]


@dataclass(frozen=True)
class LocalConfig:
    """Stopping rules are disjunctive; ``None`` tolerances derive from the box."""

    max_iters: Optional[int] = None
    x_tol: Optional[float] = None
    f_tol: float = 1e-8
    substeps: int = DEFAULT_SUBSTEPS
    lin_tol: float = DEFAULT_LIN_TOL

    def __post_init__(self):
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.x_tol is not None and not self.x_tol > 0:
            raise ValueError("x_tol must be positive")
        if not self.f_tol > 0:
            raise ValueError("f_tol must be positive")

    def resolved(self, box: ParameterBox) -> "LocalConfig":
        width = float(np.max(box.width)) if box.p else 0.0
        return replace(self,
                       max_iters=self.max_iters if self.max_iters is not None else 400 * box.p,
                       x_tol=self.x_tol if self.x_tol is not None else 1e-6 * max(width, 1e-300))


@dataclass
class _Simplex:
    X: np.ndarray
    F: np.ndarray

    def sort(self):
        order = np.argsort(self.F, kind="stable")
        self.X, self.F = self.X[order], self.F[order]

    @property
    def diameter(self) -> float:
        return float(np.max(np.abs(self.X[1:] - self.X[0]))) if len(self.X) > 1 else 0.0

    @property
    def spread(self) -> float:
        return float(self.F[-1] - self.F[0])


def _initial_simplex(x0, box: ParameterBox) -> np.ndarray:
    p = box.p
    X = np.tile(x0, (p + 1, 1))
    for i in range(p):
        step = INITIAL_EDGE * box.width[i]
        # step inward when the start sits on the upper bound
        X[i + 1, i] = x0[i] + step if x0[i] + step <= box.hi[i] else x0[i] - step
    return X


def nelder_mead(fun, x0, box: ParameterBox, max_iters: int, x_tol: float, f_tol: float):
    """Projected Nelder-Mead; ``fun(x) -> float``.

    Returns ``(x_best, f_best, iterations, evaluations, reason)``.
    """
    x0 = np.asarray(x0, dtype=float)
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return float(fun(x))

    X = _initial_simplex(x0, box)
    S = _Simplex(X, np.array([f(x) for x in X]))
    S.sort()
    it = 0
    reason = "max_iters"
    while it < max_iters:
        if S.diameter < x_tol:
            reason = "x_tol"
            break
        if S.spread < f_tol:
            reason = "f_tol"
            break
        it += 1
        centroid = S.X[:-1].mean(axis=0)
        worst, f_worst = S.X[-1], S.F[-1]
        xr = box.project(centroid + REFLECT * (centroid - worst))
        fr = f(xr)
        if fr < S.F[0]:
            xe = box.project(centroid + EXPAND * (xr - centroid))
            fe = f(xe)
            S.X[-1], S.F[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < S.F[-2]:
            S.X[-1], S.F[-1] = xr, fr
        else:
            if fr < f_worst:
                xc = box.project(centroid + CONTRACT * (xr - centroid))
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = box.project(centroid + CONTRACT * (worst - centroid))
                fc = f(xc)
                accept = fc < f_worst
            if accept:
                S.X[-1], S.F[-1] = xc, fc
            else:
                for j in range(1, len(S.X)):
                    S.X[j] = box.project(S.X[0] + SHRINK * (S.X[j] - S.X[0]))
                    S.F[j] = f(S.X[j])
        S.sort()
    return S.X[0].copy(), float(S.F[0]), it, evals, reason


def local_minimize(target, x0, box: Optional[ParameterBox] = None,
                   cfg: LocalConfig = LocalConfig()) -> EstimationResult:
    """Nelder-Mead from ``x0``.

    A run is non-converged when its best fitness is PENALTY or exceeds the
    fitness of its own start point.
    """
    started = time.perf_counter()
    objective = as_objective(target, cfg.substeps, cfg.lin_tol)
    box = box if box is not None else objective.box
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != box.p or not box.contains(x0):
        raise ValueError(f"start point {x0.tolist()} is outside the box")
    cfg = cfg.resolved(box)
    first = {}

    def fun(x):
        value = objective(x).value
        first.setdefault("f0", value)
        return value

    x, fx, iters, evals, reason = nelder_mead(fun, x0, box, cfg.max_iters, cfg.x_tol, cfg.f_tol)
    converged = fx < PENALTY and fx <= first["f0"]
    return EstimationResult(
        alpha_hat=x, fitness=fx, trace=[("iterations", iters), ("stop", reason)], evaluations=evals,
        wall_time=time.perf_counter() - started, converged=bool(converged),
        penalized=fx >= PENALTY, algorithm="loa", start=x0.copy())


def random_start(box: ParameterBox, s: RngStream) -> np.ndarray:
    return np.asarray(s.uniform(box.lo, box.hi, size=box.p), dtype=float)


def refined_estimate(target, ucfg: UmdacConfig, lcfg: LocalConfig, s: RngStream) -> EstimationResult:
    """UMDAc, then Nelder-Mead from its estimate; the better of the two is returned.

    Both stages share one objective built with the UMDAc filter settings so
    their fitness values are comparable.
    """
    started = time.perf_counter()
    objective = as_objective(target, ucfg.substeps, ucfg.lin_tol)
    eda = umdac_minimize(objective, ucfg, s)
    loc = local_minimize(objective, eda.alpha_hat, objective.box, lcfg)
    # the local run starts at the EDA point, so it cannot be worse; keep the guard anyway
    better = loc if loc.fitness <= eda.fitness else eda
    return EstimationResult(
        alpha_hat=better.alpha_hat.copy(), fitness=better.fitness, trace=eda.trace,
        evaluations=eda.evaluations + loc.evaluations, wall_time=time.perf_counter() - started,
        converged=not better.penalized, penalized=better.penalized, algorithm="refined",
        start=eda.alpha_hat.copy(), stages=(eda, loc))
