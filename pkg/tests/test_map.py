from __future__ import annotations

import numpy as np
import pytest
from scipy import linalg

from skewmodal.errors import IndefiniteHessian, NotConverged
from skewmodal.map_estimate import find_map
from skewmodal.model import DataSet, ModelSpec, exponential_expprior, gamma_poisson, logit_gaussian, probit_gaussian

from conftest import gaussian_mean_model, probit_fixture


def test_exponential_map(exp_data):
    r = find_map(exponential_expprior(), exp_data)
    assert r.converged
    assert r.theta_hat[0] == pytest.approx(4 / 3, abs=1e-14)
    assert r.grad_norm < 1e-10
    assert r.observed_info[0, 0] == pytest.approx(2.25, rel=1e-12)
    assert r.cholesky[0, 0] == pytest.approx(np.sqrt(2.25 / 4), rel=1e-12)


def test_gamma_poisson_map(gp_data):
    r = find_map(gamma_poisson(2, 1), gp_data)
    # (alpha - 1 + sum x) / (beta + n)
    assert r.theta_hat[0] == pytest.approx((2 - 1 + 3) / (1 + 3), abs=1e-13)


def test_probit_all_zero_responses_is_regularized():
    rng = np.random.default_rng(0)
    z = np.column_stack([np.ones(27), rng.lognormal(size=(27, 2))])
    data = DataSet(np.zeros(27), z)
    r = find_map(probit_gaussian(25.0), data)
    assert r.converged
    assert r.grad_norm <= 1e-8 * max(1.0, abs(r.kernel))
    assert np.all(linalg.eigvalsh(r.observed_info) > 0)


def test_kernel_trace_non_decreasing(probit_data):
    r = find_map(logit_gaussian(25.0), probit_data, init=np.array([3.0, -3.0, 3.0]))
    trace = np.array(r.kernel_trace)
    assert np.all(np.diff(trace) >= 0)


def test_idempotent_restart(probit_data):
    m = probit_gaussian(25.0)
    r = find_map(m, probit_data)
    again = find_map(m, probit_data, init=r.theta_hat)
    assert again.iterations <= 1
    np.testing.assert_allclose(again.theta_hat, r.theta_hat, atol=1e-12)


@pytest.mark.parametrize("init", [[0.0, 0.0], [10.0, -7.0], [-100.0, 50.0]])
def test_quadratic_kernel_one_newton_step(gaussian_data, init):
    m = gaussian_mean_model(prior_variance=4.0)
    r = find_map(m, gaussian_data, init=np.array(init))
    assert r.iterations == 1
    expected = gaussian_data.covariates.sum(axis=0) / (gaussian_data.n + 1 / 4.0)
    np.testing.assert_allclose(r.theta_hat, expected, rtol=1e-12)


def test_steps_leaving_domain_are_halved():
    # start far from the mode so the first Newton step would cross zero
    data = DataSet(np.full(10, 2.0))
    r = find_map(exponential_expprior(), data, init=[5.0])
    assert r.converged
    assert r.theta_hat[0] == pytest.approx(10 / 21, rel=1e-12)


def test_not_converged_returns_or_raises(probit_data):
    m = probit_gaussian()
    r = find_map(m, probit_data, init=np.array([2.0, 2.0, 2.0]), max_iter=1)
    assert not r.converged
    with pytest.raises(NotConverged) as info:
        find_map(m, probit_data, init=np.array([2.0, 2.0, 2.0]), max_iter=1, strict=True)
    assert info.value.result is not None


def test_indefinite_final_hessian():
    # flat likelihood and flat prior: the Hessian is zero at every point
    flat = ModelSpec(
        name="flat",
        loglik=lambda t, d: 0.0,
        logprior=lambda t: 0.0,
        loglik_derivs={1: lambda t, d: np.zeros(1), 2: lambda t, d: np.zeros((1, 1))},
        logprior_derivs={1: lambda t: np.zeros(1), 2: lambda t: np.zeros((1, 1))},
        guard=lambda t: True,
        dim=1,
    )
    with pytest.raises(IndefiniteHessian):
        find_map(flat, DataSet([0.0]))


def test_default_inits(exp_data, gp_data):
    assert exponential_expprior().init(exp_data)[0] == pytest.approx(1 / np.mean(exp_data.responses))
    assert gamma_poisson(2, 1).init(gp_data)[0] == pytest.approx((2 + 3) / (1 + 3))
    np.testing.assert_array_equal(probit_gaussian().init(probit_fixture(5, 1)), np.zeros(3))


def test_bad_tolerance(exp_data):
    with pytest.raises(ValueError):
        find_map(exponential_expprior(), exp_data, tol=0.0)
