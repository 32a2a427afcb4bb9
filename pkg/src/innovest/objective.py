"""The innovation fitness ``q(alpha)`` and the objective wrappers optimizers consume.

Every optimizer in the package minimizes a callable ``objective(alpha) ->
FitnessEvaluation``.  :class:`InnovationObjective` wraps the LL filter;
:class:`SphereObjective` is an analytic surrogate with a known minimizer used
to test the optimizers without filtering cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .llfilter import DEFAULT_SUBSTEPS, PENALTY, run_filter
from .models import EstimationProblem, ParameterBox

# default re-linearization tolerance inside observation gaps; 0 freezes the
# linearization over the whole gap
DEFAULT_LIN_TOL = 1e-2

__all__ = ["FitnessEvaluation", "q_fitness", "InnovationObjective", "SphereObjective",
           "PENALTY", "DEFAULT_LIN_TOL"]


@dataclass(frozen=True)
class FitnessEvaluation:
    alpha: np.ndarray
    value: float
    penalized: bool = False
    n_used: int = 0

    def __post_init__(self):
        if not self.penalized and not np.isfinite(self.value):
            raise ValueError("non-penalized evaluations must be finite")


def q_fitness(problem: EstimationProblem, alpha, substeps: int = DEFAULT_SUBSTEPS,
              lin_tol: float = DEFAULT_LIN_TOL) -> FitnessEvaluation:
    """``N r ln(2 pi) + sum_k [ln det S_k + nu_k^T S_k^{-1} nu_k]``, or PENALTY when the filter fails."""
    alpha = np.array(alpha, dtype=float).ravel()
    run = run_filter(problem, alpha, substeps=substeps, lin_tol=lin_tol)
    if not run.ok or run.fitness >= PENALTY:
        return FitnessEvaluation(alpha, PENALTY, True, run.n_used)
    return FitnessEvaluation(alpha, run.fitness, False, run.n_used)


@dataclass
class InnovationObjective:
    """``q_fitness`` bound to one problem, counting its calls."""

    problem: EstimationProblem
    substeps: int = DEFAULT_SUBSTEPS
    lin_tol: float = DEFAULT_LIN_TOL
    calls: int = field(default=0, init=False)

    @property
    def box(self) -> ParameterBox:
        return self.problem.box

    def __call__(self, alpha) -> FitnessEvaluation:
        self.calls += 1
        return q_fitness(self.problem, alpha, self.substeps, self.lin_tol)


@dataclass
class SphereObjective:
    """``q(x) = sum_i (x_i - c_i)^2`` plus an optional constant ``offset``."""

    center: np.ndarray
    box: ParameterBox
    offset: float = 0.0
    calls: int = field(default=0, init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).ravel()
        if self.center.size != self.box.p:
            raise ValueError("center and box dimensions differ")

    def __call__(self, alpha) -> FitnessEvaluation:
        self.calls += 1
        alpha = np.array(alpha, dtype=float).ravel()
        return FitnessEvaluation(alpha, float(np.sum((alpha - self.center) ** 2)) + self.offset,
                                 False, 0)


def as_objective(target, substeps: int = DEFAULT_SUBSTEPS, lin_tol: float = DEFAULT_LIN_TOL):
    """Wrap an :class:`EstimationProblem`; pass objectives through unchanged."""
    if isinstance(target, EstimationProblem):
        return InnovationObjective(target, substeps, lin_tol)
    if not callable(target) or not hasattr(target, "box"):
        raise TypeError("expected an EstimationProblem or an objective with a .box")
    return target
