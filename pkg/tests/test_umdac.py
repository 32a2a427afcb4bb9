import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from innovest.models import as_box
from innovest.objective import SphereObjective
from innovest.rng import RngStream
from innovest.umdac import (GaussianMarginals, Individual, UmdacConfig, fit_marginals, init_population,
                            sample_population, sigma_floor, truncation_select, umdac_minimize)
from oracles import uniform_mean_band

CUBE = as_box([-5.0] * 3, [5.0] * 3)
C = np.array([1.0, -2.0, 3.0])


def evaluated(values):
    return [Individual(np.array([float(i)]), float(v)) for i, v in enumerate(values)]


def test_config_counts_and_validation():
    cfg = UmdacConfig()
    assert (cfg.n_selected, cfg.n_elite) == (18, 3)
    assert UmdacConfig.for_dimension(3).M == 60
    for bad in (dict(M=1), dict(tau=0.0), dict(tau=1.5), dict(elite_frac=1.0), dict(M=5, tau=0.3),
                dict(generations=0)):
        with pytest.raises(ValueError):
            UmdacConfig(**bad)


def test_init_population_moments():
    box = as_box([0, 0, 0], [5, 5, 1])
    pop = init_population(box, 60, RngStream(11))
    X = np.array([ind.x for ind in pop])
    lo, hi = uniform_mean_band(box.lo, box.hi, 60)
    assert np.all((X.mean(axis=0) > lo) & (X.mean(axis=0) < hi))
    assert all(box.contains(x) for x in X)


def test_init_population_degenerate_box():
    box = as_box([1.0, -2.0], [1.0, -2.0])
    assert all(np.array_equal(ind.x, [1.0, -2.0]) for ind in init_population(box, 10, RngStream(0)))


def test_init_population_streams():
    s = RngStream(4)
    a = init_population(CUBE, 5, s)
    b = init_population(CUBE, 5, s)
    c = init_population(CUBE, 5, RngStream(4))
    assert not np.array_equal(a[0].x, b[0].x)
    assert all(np.array_equal(x.x, y.x) for x, y in zip(a, c))


def test_truncation_counts_and_ties():
    rng = np.random.default_rng(0)
    pop = evaluated(rng.normal(size=60))
    sel = truncation_select(pop, 0.3)
    assert len(sel) == 18
    assert max(i.fitness for i in sel) <= min(i.fitness for i in pop if i not in sel)
    flat = evaluated([2.0] * 60)
    assert [i.x[0] for i in truncation_select(flat, 0.3)] == list(range(18))
    assert len(truncation_select(pop, 1.0)) == 60
    with pytest.raises(ValueError):
        truncation_select([Individual(np.zeros(1))] * 4, 0.5)


def test_fit_marginals_examples():
    m = fit_marginals([Individual(np.array([1.0])), Individual(np.array([3.0]))])
    assert m.mu[0] == 2.0 and m.sigma[0] == 1.0
    same = [Individual(np.array([0.4, 0.4])) for _ in range(5)]
    assert np.array_equal(fit_marginals(same, sigma_floor(CUBE)).sigma, [1e-8, 1e-8])
    z = np.random.default_rng(1).standard_normal(10_000)
    m = fit_marginals([Individual(np.array([v])) for v in z])
    assert abs(m.mu[0]) < 0.04 and abs(m.sigma[0] - 1) < 0.03


def test_sigma_floor():
    assert sigma_floor(as_box([0, 0], [2, 10])) == pytest.approx(1e-8)
    assert sigma_floor(as_box([1], [1])) > 0


def test_sampling_at_floor_stays_near_mean():
    floor = sigma_floor(CUBE)
    m = GaussianMarginals(np.array([0.5, 0.5, 0.5]), np.full(3, floor))
    X = np.array([i.x for i in sample_population(m, CUBE, 500, RngStream(2))])
    assert np.all(np.abs(X - 0.5) <= 6 * floor)


def test_sampling_clamps_far_mean():
    m = GaussianMarginals(np.array([5.0 + 10 * 0.01, 0.0, 0.0]), np.array([0.01, 1.0, 1.0]))
    X = np.array([i.x for i in sample_population(m, CUBE, 20, RngStream(3))])
    assert np.all(X[:, 0] == 5.0)


def test_sampling_mean_in_wide_box():
    mu, sig = 0.3, 0.02
    box = as_box([mu - 10 * sig], [mu + 10 * sig])
    X = np.array([i.x[0] for i in sample_population(GaussianMarginals(np.array([mu]), np.array([sig])),
                                                     box, 10_000, RngStream(5))])
    assert abs(X.mean() - mu) < 4 * sig / 100
    assert sample_population(GaussianMarginals(np.array([mu]), np.array([sig])), box, 0, RngStream(5)) == []


def test_single_generation_picks_better_of_two():
    obj = SphereObjective(C, CUBE)
    res = umdac_minimize(obj, UmdacConfig(M=2, tau=1.0, elite_frac=0.0, generations=1), RngStream(9))
    pop = init_population(CUBE, 2, RngStream(9))
    best = min(pop, key=lambda i: obj(i.x).value)
    assert np.array_equal(res.alpha_hat, best.x) and res.evaluations == 2


@pytest.mark.parametrize("seed", range(10))
def test_sphere_convergence(seed):
    res = umdac_minimize(SphereObjective(C, CUBE), UmdacConfig(), RngStream(seed))
    assert np.max(np.abs(res.alpha_hat - C)) < 1e-2
    assert res.converged and len(res.trace) == 50


@settings(max_examples=15)
@given(st.integers(0, 2**32), st.integers(2, 12), st.sampled_from([0.05, 0.1, 0.2]))
def test_elitism_containment_and_budget(seed, G, eps):
    box = as_box([-1.0, 0.0], [2.0, 0.5])
    seen = []

    class Recording(SphereObjective):
        def __call__(self, x):
            seen.append(np.array(x))
            return super().__call__(x)

    cfg = UmdacConfig(M=30, elite_frac=eps, generations=G)
    res = umdac_minimize(Recording([3.0, 0.2], box), cfg, RngStream(seed))
    best = [g.best for g in res.trace]
    assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
    assert all(box.contains(x) for x in seen)
    assert res.evaluations == len(seen) == cfg.M + (G - 1) * (cfg.M - cfg.n_elite)


@settings(max_examples=10)
@given(st.integers(0, 2**32), st.integers(-50, 50))
def test_translation_invariance(seed, shift):
    cfg = UmdacConfig(M=20, generations=12)
    a = umdac_minimize(SphereObjective(C, CUBE), cfg, RngStream(seed))
    b = umdac_minimize(SphereObjective(C, CUBE, offset=float(shift)), cfg, RngStream(seed))
    assert np.array_equal(a.alpha_hat, b.alpha_hat)
    for ra, rb in zip(a.trace, b.trace):
        assert np.array_equal(ra.mu, rb.mu) and np.array_equal(ra.sigma, rb.sigma)


def test_early_stop():
    cfg = UmdacConfig(generations=50, early_stop_value=1.0)
    res = umdac_minimize(SphereObjective(C, CUBE), cfg, RngStream(0))
    assert len(res.trace) < 50 and res.fitness < 1.0
    assert res.evaluations == cfg.M + (len(res.trace) - 1) * (cfg.M - cfg.n_elite)


def test_penalized_individuals_participate():
    from innovest.objective import PENALTY, FitnessEvaluation

    class HalfPenalized(SphereObjective):
        def __call__(self, x):
            if x[0] < 0:
                return FitnessEvaluation(np.array(x), PENALTY, True)
            return super().__call__(x)

    res = umdac_minimize(HalfPenalized(C, CUBE), UmdacConfig(), RngStream(1))
    assert not res.penalized and res.converged and np.max(np.abs(res.alpha_hat - C)) < 1e-2
    everywhere = umdac_minimize(HalfPenalized(C, as_box([-5, -5, -5], [-1, 5, 5])),
                                UmdacConfig(M=10, generations=3), RngStream(1))
    assert everywhere.penalized and not everywhere.converged and everywhere.fitness == PENALTY
