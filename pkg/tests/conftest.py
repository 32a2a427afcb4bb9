import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from innovest.experiments import build_problem, preset  # noqa: E402
from innovest.models import EstimationProblem, as_box, fhn_model, ou_model  # noqa: E402
from innovest.rng import RngStream  # noqa: E402
from innovest.simulate import synthesize  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FHN_TRUE = np.array([1.0, 1.0, 0.1])
FHN_X0 = np.array([-0.9323, -0.6732])

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def ou_problem():
    return build_problem(preset("ou"))


@pytest.fixture(scope="session")
def fhn_short():
    """FHN with 40 observation gaps: cheap enough for unit tests."""
    m = fhn_model()
    _, obs = synthesize(m, FHN_TRUE, FHN_X0, 0.0005, 0.5, 40, RngStream(3))
    return EstimationProblem(m, obs, as_box([0, 0, 0], [5, 5, 1]), FHN_X0, 1e-2 * np.eye(2))


@pytest.fixture(scope="session")
def fhn_full():
    return build_problem(preset("fhn"))


@pytest.fixture(scope="session")
def mult_problem():
    return build_problem(preset("mult"))
