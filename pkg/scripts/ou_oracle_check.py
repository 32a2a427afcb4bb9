"""Compare the LL filter on the scalar OU model with an exact Kalman filter over a theta grid."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import ou_kalman  # noqa: E402

from innovest.experiments import build_problem, preset  # noqa: E402
from innovest.llfilter import run_filter  # noqa: E402


def run() -> int:
    problem = build_problem(preset("ou"))
    z = problem.observations.values[:, 0]
    t = problem.observations.times
    worst = 0.0
    for theta in np.linspace(0.2, 3.0, 41):
        q = run_filter(problem, [theta]).fitness
        ref = ou_kalman(z, t, theta, 0.5, 0.3, 0.01, 0.5, 0.01)["q"]
        worst = max(worst, abs(q - ref) / abs(ref))
        print(f"theta {theta:.2f}  q {q:.12g}  oracle {ref:.12g}")
    print(f"largest relative difference {worst:.2e}")
    return 0 if worst < 1e-6 else 1


if __name__ == "__main__":
    sys.exit(run())
