import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from innovest.local import LocalConfig, local_minimize, nelder_mead, random_start, refined_estimate
from innovest.models import as_box
from innovest.objective import PENALTY, FitnessEvaluation, SphereObjective
from innovest.rng import RngStream
from innovest.umdac import UmdacConfig, umdac_minimize
from oracles import projected_quadratic_min

CUBE = as_box([-5.0] * 3, [5.0] * 3)
C = np.array([1.0, -2.0, 3.0])


def test_config_defaults_resolve_from_box():
    cfg = LocalConfig().resolved(as_box([0, 0], [2, 10]))
    assert cfg.max_iters == 800 and cfg.x_tol == pytest.approx(1e-5) and cfg.f_tol == 1e-8
    for bad in (dict(max_iters=0), dict(x_tol=0.0), dict(f_tol=-1.0)):
        with pytest.raises(ValueError):
            LocalConfig(**bad)


def test_start_at_optimum():
    res = local_minimize(SphereObjective(C, CUBE), C)
    assert np.max(np.abs(res.alpha_hat - C)) < 1e-6
    # the simplex only contracts; 0.5-wide edges shrink to x_tol in 60 iterations
    assert dict(res.trace)["iterations"] <= 100 and res.converged


def test_minimizer_outside_box():
    box = as_box([0, 0, 0], [1, 1, 1])
    c = np.array([0.5, 2.0, -1.0])
    res = local_minimize(SphereObjective(c, box), [0.2, 0.2, 0.8], cfg=LocalConfig(f_tol=1e-14))
    expect = projected_quadratic_min(c, box.lo, box.hi)
    assert np.allclose(res.alpha_hat, expect, rtol=0, atol=1e-5)
    assert res.alpha_hat[1] == 1.0 and res.alpha_hat[2] == 0.0


def test_random_starts_reach_projected_minimizer():
    box = as_box([-1, 0, 2], [3, 1, 4])
    c = np.array([0.3, 1.7, 1.0])
    expect = projected_quadratic_min(c, box.lo, box.hi)
    s = RngStream(21)
    cfg = LocalConfig(f_tol=1e-14)
    for _ in range(50):
        res = local_minimize(SphereObjective(c, box), random_start(box, s), cfg=cfg)
        assert np.max(np.abs(res.alpha_hat - expect)) < 1e-5
        assert box.contains(res.alpha_hat)


def test_start_outside_box_is_rejected():
    with pytest.raises(ValueError):
        local_minimize(SphereObjective(C, CUBE), [6.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        local_minimize(SphereObjective(C, CUBE), [0.0, 0.0])


def test_penalty_everywhere_is_non_converged():
    class Flat(SphereObjective):
        def __call__(self, x):
            return FitnessEvaluation(np.array(x), PENALTY, True)

    res = local_minimize(Flat(C, CUBE), [0.0, 0.0, 0.0])
    assert not res.converged and res.penalized and res.fitness == PENALTY


def test_initial_simplex_steps_inward_on_upper_bound():
    calls = []
    box = as_box([0, 0], [1, 1])
    nelder_mead(lambda x: calls.append(np.array(x)) or 0.0, [1.0, 1.0], box, 1, 1e-9, 1.0)
    assert np.allclose(calls[1], [0.95, 1.0]) and np.allclose(calls[2], [1.0, 0.95])


@settings(max_examples=20)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(1, 30))
def test_never_worse_than_start(x0, iters):
    obj = SphereObjective([4.0, 4.0, -4.0], CUBE)
    res = local_minimize(obj, x0, cfg=LocalConfig(max_iters=iters))
    assert res.fitness <= obj(x0).value and CUBE.contains(res.alpha_hat)


def test_refined_is_identity_at_optimum():
    obj = SphereObjective(C, CUBE)
    res = local_minimize(obj, C, cfg=LocalConfig(x_tol=1e-7))
    assert np.max(np.abs(res.alpha_hat - C)) < 1e-7


def test_refinement_improves_loose_eda():
    ucfg = UmdacConfig(generations=5)
    strictly = 0
    for seed in range(10):
        obj = SphereObjective(C, CUBE)
        eda = umdac_minimize(obj, ucfg, RngStream(seed))
        ref = refined_estimate(SphereObjective(C, CUBE), ucfg, LocalConfig(), RngStream(seed))
        assert ref.stages[0].fitness == eda.fitness
        assert ref.fitness <= eda.fitness
        strictly += ref.fitness < eda.fitness
        assert ref.algorithm == "refined" and np.array_equal(ref.start, eda.alpha_hat)
    assert strictly >= 9
