import numpy as np
import pytest
from hypothesis import given, strategies as st

from innovest.models import (BUILTIN_MODELS, DomainError, EstimationProblem, EvaluationError,
                             ParameterBox, StateSpaceModel, as_box, fhn_model, get_model, jacobians,
                             jacobian_discrepancy, multiplicative_model, ou_model, sqrt_diffusion_raw)
from innovest.simulate import ObservationSeries

finite = st.floats(-3, 3, allow_nan=False)


@pytest.mark.parametrize("name", sorted(BUILTIN_MODELS))
def test_callback_shapes(name):
    m = get_model(name)
    x = np.linspace(0.3, 0.7, m.d)
    a = np.linspace(0.5, 1.0, m.p)
    assert np.shape(m.drift(0.0, x, a)) == (m.d,)
    for i in range(m.m):
        assert np.shape(m.diffusion(0.0, x, a, i)) == (m.d,)
        assert np.shape(m.jac_diffusion(0.0, x, a, i)) == (m.d, m.d)
    assert np.shape(m.obs_mean(0.0, x)) == (m.r,)
    assert np.shape(m.jac_drift(0.0, x, a)) == (m.d, m.d)
    assert np.shape(m.jac_obs(0.0, x)) == (m.r, m.d)


@given(st.tuples(finite, finite), st.tuples(st.floats(0, 5), st.floats(0, 5), st.floats(0, 1)))
def test_fhn_jacobians_match_finite_differences(x, a):
    assert jacobian_discrepancy(fhn_model(), 0.0, np.array(x), np.array(a)) < 1e-5


@given(st.tuples(st.floats(0.05, 3), finite),
       st.tuples(st.floats(0, 2), st.floats(-3, 0), st.floats(0, 0.3), st.floats(-3, 0), st.floats(0, 0.1)))
def test_mult_jacobians_match_finite_differences(x, a):
    # x1 kept away from the sqrt kink at 0
    assert jacobian_discrepancy(multiplicative_model(), 0.0, np.array(x), np.array(a)) < 1e-5


@given(st.floats(-3, 3), st.floats(0.2, 3))
def test_ou_jacobians_match_finite_differences(x, theta):
    assert jacobian_discrepancy(ou_model(), 0.0, np.array([x]), np.array([theta])) < 1e-5


def test_fhn_values():
    m = fhn_model()
    f = m.drift(0.0, np.array([1.0, 0.5]), np.array([1.0, 1.0, 0.1]))
    assert np.allclose(f, [100 * (1 - 1 / 3 - 0.5), 2.0])
    assert np.allclose(m.diffusion(0.0, np.zeros(2), np.array([1, 1, 0.1]), 0), [0, 0.1])
    assert np.allclose(m.obs_noise_cov, 1e-6 * np.eye(2))


def test_mult_observation_at_zero_x2():
    m = multiplicative_model()
    assert m.obs_mean(0.0, np.array([0.7, 0.0]))[0] == 0.0
    assert m.extra_obs_noise(0.0, np.array([[0.7, 0.0]]), np.array([[1.3]]))[0, 0] == 0.0


def test_sqrt_diffusion_domain():
    assert sqrt_diffusion_raw(4.0, 0.5) == 1.0
    with pytest.raises(DomainError):
        sqrt_diffusion_raw(-0.1, 1.0)
    m = multiplicative_model()
    # the compiled callback clamps instead of failing
    assert m.diffusion(0.0, np.array([-0.1, 0.0]), np.ones(5), 0)[0] == 0.0
    assert list(m.in_domain(np.array([[0.1, 0], [-0.1, 0]]))) == [True, False]


def test_sigma_must_be_symmetric_psd():
    kw = dict(name="x", d=1, m=1, r=2, p=1, drift=None, diffusion=None, obs_mean=None)
    with pytest.raises(ValueError):
        StateSpaceModel(obs_noise_cov=np.array([[1.0, 0.5], [0.0, 1.0]]), **kw)
    with pytest.raises(ValueError):
        StateSpaceModel(obs_noise_cov=np.array([[1.0, 0.0], [0.0, -1.0]]), **kw)
    with pytest.raises(ValueError):
        StateSpaceModel(obs_noise_cov=np.eye(3), **kw)


def test_box_contract():
    with pytest.raises(ValueError):
        as_box([1.0], [0.0])
    b = as_box([0, -1], [1, 1])
    assert b.contains([0.5, 0]) and not b.contains([1.5, 0])
    assert np.array_equal(b.project([2, -3]), [1, -1])
    assert b.names == ("alpha1", "alpha2")


def test_problem_validation():
    m = ou_model()
    obs = ObservationSeries([0.0, 0.5], [[0.1], [0.2]])
    box = as_box([0.2], [3.0])
    EstimationProblem(m, obs, box, [0.5], [[0.01]])
    with pytest.raises(ValueError):
        EstimationProblem(m, obs, box, [0.5], [[-0.01]])
    with pytest.raises(ValueError):
        EstimationProblem(m, obs, as_box([0, 0], [1, 1]), [0.5], [[0.01]])


def test_jacobians_reject_nonfinite():
    m = fhn_model()
    with pytest.raises(EvaluationError):
        jacobians(m, 0.0, np.array([np.inf, 0.0]), np.array([1.0, 1.0, 0.1]))


def test_affine_forcing_reconstructs_drift():
    m = fhn_model()
    x = np.array([0.3, -0.2])
    a = np.array([1.0, 1.0, 0.1])
    c = jacobians(m, 0.0, x, a)
    assert np.allclose(c.A @ x + c.a_const, m.drift(0.0, x, a))
    assert np.allclose(c.B[0] @ x + c.b_const[0], m.diffusion(0.0, x, a, 0))


def test_unknown_model():
    with pytest.raises(ValueError):
        get_model("nope")


def test_python_callbacks_not_compiled():
    m = StateSpaceModel("py", 1, 1, 1, 1, lambda t, x, a: -x, lambda t, x, a, i: np.ones(1),
                        lambda t, x: x, np.eye(1))
    assert not m.compiled
    assert fhn_model().compiled


def test_discrepancy_ignores_negligible_entries():
    # alpha2 ~ 1e-17 makes J[1, 0] tiny while finite differences return 0 there
    assert jacobian_discrepancy(fhn_model(), 0.0, np.zeros(2), np.array([1.0, 2.6792337767316967e-17, 0.0])) < 1e-5
    a = np.array([1.0, -1.192092896e-07, 0.0, 0.0, 0.0])
    assert jacobian_discrepancy(multiplicative_model(), 0.0, np.array([1.0, 0.0]), a) < 1e-5


def test_discrepancy_flags_wrong_jacobian():
    m = fhn_model()
    bad = StateSpaceModel("bad", 2, 1, 2, 3, m.drift, m.diffusion, m.obs_mean, m.obs_noise_cov,
                          jac_drift=lambda t, x, a: 1.001 * m.jac_drift(t, x, a),
                          jac_diffusion=m.jac_diffusion, jac_obs=m.jac_obs)
    assert jacobian_discrepancy(bad, 0.0, np.array([0.3, 0.1]), np.array([1.0, 1.0, 0.1])) > 5e-4
