"""Continuous univariate marginal distribution algorithm (UMDAc) with Gaussian marginals.

One generation: rank the population, keep the best ``floor(tau M)``, fit an
independent Gaussian to each coordinate of that selection, carry the
``ceil(elite_frac M)`` best individuals over unchanged and sample the rest
from the fitted marginals inside the box.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .llfilter import DEFAULT_SUBSTEPS
from .models import ParameterBox
from .objective import DEFAULT_LIN_TOL, FitnessEvaluation, as_objective
from .rng import RngStream

MAX_REJECTIONS = 100
# guards ceil/floor against products like 0.05*60 landing just above an integer
_ROUND_EPS = 1e-9

__all__ = ["Individual", "GaussianMarginals", "UmdacConfig", "GenerationRecord", "EstimationResult",
           "sigma_floor", "init_population", "truncation_select", "fit_marginals",
           "sample_population", "umdac_minimize"]


@dataclass
class Individual:
    x: np.ndarray
    fitness: Optional[float] = None
    penalized: bool = False

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


@dataclass(frozen=True)
class GaussianMarginals:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class UmdacConfig:
    M: int = 60
    tau: float = 0.3
    elite_frac: float = 0.05
    generations: int = 50
    early_stop_value: Optional[float] = None
    substeps: int = DEFAULT_SUBSTEPS
    lin_tol: float = DEFAULT_LIN_TOL

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("population size M must be at least 2")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= self.elite_frac < 1:
            raise ValueError("elite_frac must lie in [0, 1)")
        if self.n_selected < 2:
            raise ValueError(f"floor(tau*M) = {self.n_selected} must be at least 2")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")
        if self.n_elite >= self.M:
            raise ValueError("elite count must leave room for sampled individuals")

    @property
    def n_selected(self) -> int:
        return int(math.floor(self.tau * self.M + _ROUND_EPS))

    @property
    def n_elite(self) -> int:
        return int(math.ceil(self.elite_frac * self.M - _ROUND_EPS))

    @classmethod
    def for_dimension(cls, p: int, **kw) -> "UmdacConfig":
        """Population of 20 individuals per parameter."""
        return cls(M=20 * p, **kw)


@dataclass
class GenerationRecord:
    best: float
    mean: float
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class EstimationResult:
    alpha_hat: np.ndarray
    fitness: float
    trace: list = field(default_factory=list)
    evaluations: int = 0
    wall_time: float = 0.0
    converged: bool = True
    penalized: bool = False
    algorithm: str = "umdac"
    start: Optional[np.ndarray] = None
    # component runs of a composite estimator (the EDA and local stages of a refined run)
    stages: tuple = ()


def sigma_floor(box: ParameterBox) -> float:
    width = float(np.max(box.width)) if box.p else 0.0
    # a zero-width box still needs a positive floor
    return 1e-9 * width if width > 0 else 1e-300


def init_population(box: ParameterBox, M: int, s: RngStream) -> list[Individual]:
    """``M`` points uniform in the box, drawn individual-major."""
    if M < 2:
        raise ValueError("M must be at least 2")
    pts = s.uniform(box.lo, box.hi, size=(M, box.p))
    return [Individual(np.array(row, dtype=float)) for row in np.atleast_2d(pts)]


def truncation_select(pop: list[Individual], tau: float) -> list[Individual]:
    """The ``floor(tau M)`` lowest-fitness individuals, ties kept in index order."""
    if any(not ind.evaluated for ind in pop):
        raise ValueError("truncation_select needs an evaluated population")
    n = int(math.floor(tau * len(pop) + _ROUND_EPS))
    if n < 2:
        raise ValueError(f"floor(tau*M) = {n} must be at least 2")
    order = np.argsort([ind.fitness for ind in pop], kind="stable")
    return [pop[i] for i in order[:n]]


def fit_marginals(selected: list[Individual], floor: float = 0.0) -> GaussianMarginals:
    """Per-coordinate mean and 1/n standard deviation, floored at ``floor``."""
    if len(selected) < 2:
        raise ValueError("need at least two points to fit marginals")
    X = np.array([ind.x for ind in selected])
    mu = X.mean(axis=0)
    sigma = np.sqrt(np.mean((X - mu) ** 2, axis=0))
    return GaussianMarginals(mu, np.maximum(sigma, floor))


def _draw_inside(mu: float, sigma: float, lo: float, hi: float, s: RngStream) -> float:
    for _ in range(MAX_REJECTIONS):
        v = s.normal(mu, sigma)
        if lo <= v <= hi:
            return v
    return min(max(v, lo), hi)


def sample_population(marginals: GaussianMarginals, box: ParameterBox, n: int,
                      s: RngStream) -> list[Individual]:
    """``n`` individuals from the product of Gaussians, each coordinate kept in its interval.

    Coordinates are resampled up to ``MAX_REJECTIONS`` times, then clamped.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    out = []
    for _ in range(n):
        x = np.array([_draw_inside(marginals.mu[i], marginals.sigma[i], box.lo[i], box.hi[i], s)
                      for i in range(box.p)])
        out.append(Individual(x))
    return out


def _evaluate(pop: list[Individual], objective) -> int:
    calls = 0
    for ind in pop:
        if ind.evaluated:
            continue
        ev: FitnessEvaluation = objective(ind.x)
        ind.fitness = float(ev.value)
        ind.penalized = bool(ev.penalized)
        calls += 1
    return calls


def umdac_minimize(target, config: UmdacConfig, s: RngStream) -> EstimationResult:
    """Minimize ``target`` (an estimation problem or an objective with a ``box``).

    Returns the best individual ever seen.  Evaluations total
    ``M + (G - 1)(M - eps)`` when the early stop does not fire.
    """
    started = time.perf_counter()
    objective = as_objective(target, config.substeps, config.lin_tol)
    box = objective.box
    floor = sigma_floor(box)
    pop = init_population(box, config.M, s)
    evaluations = _evaluate(pop, objective)
    trace = []
    best = min(pop, key=lambda ind: ind.fitness)
    for gen in range(config.generations):
        order = np.argsort([ind.fitness for ind in pop], kind="stable")
        pop = [pop[i] for i in order]
        if pop[0].fitness < best.fitness:
            best = pop[0]
        selected = pop[:config.n_selected]
        marginals = fit_marginals(selected, floor)
        fits = np.array([ind.fitness for ind in pop])
        trace.append(GenerationRecord(float(fits[0]), float(fits.mean()), marginals.mu, marginals.sigma))
        if gen == config.generations - 1:
            break
        if config.early_stop_value is not None and best.fitness < config.early_stop_value:
            break
        elites = pop[:config.n_elite]
        pop = elites + sample_population(marginals, box, config.M - config.n_elite, s)
        evaluations += _evaluate(pop, objective)
    return EstimationResult(
        alpha_hat=best.x.copy(), fitness=best.fitness, trace=trace, evaluations=evaluations,
        wall_time=time.perf_counter() - started, converged=not best.penalized,
        penalized=best.penalized, algorithm="umdac")
