from __future__ import annotations

from itertools import permutations

import numpy as np
import pytest

from skewmodal import tensor
from skewmodal.errors import DataError, DomainError, NonFiniteEvaluation, UnsupportedOrder
from skewmodal.model import (
    DataSet,
    derivatives,
    exponential_expprior,
    finite_diff_derivatives,
    gamma_poisson,
    inverse_mills,
    load_csv,
    log_posterior_kernel,
    logit_gaussian,
    probit_gaussian,
)

from conftest import probit_fixture


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


# ---------------------------------------------------------------- data sets


def test_dataset_rejects_empty_and_mismatched_rows():
    with pytest.raises(DataError):
        DataSet(np.array([]))
    with pytest.raises(DataError):
        DataSet(np.ones(3), np.ones((2, 2)))


def test_dataset_is_read_only():
    d = DataSet([1.0, 2.0])
    assert d.n == 2
    with pytest.raises(ValueError):
        d.responses[0] = 5.0


@pytest.mark.parametrize(
    "model,data",
    [
        (exponential_expprior(), DataSet([1.0, -1.0])),
        (gamma_poisson(2, 1), DataSet([1.0, 0.5])),
        (gamma_poisson(2, 1), DataSet([1.0, -1.0])),
        (probit_gaussian(), DataSet([0.0, 2.0], np.ones((2, 1)))),
        (logit_gaussian(), DataSet([0.0, 1.0])),
    ],
)
def test_response_contracts(model, data):
    with pytest.raises(DataError):
        model.validate(data)


# ---------------------------------------------------------------- kernel


def test_exponential_kernel_value(exp_data):
    val = log_posterior_kernel(exponential_expprior(1.0), [4 / 3], exp_data)
    assert val == pytest.approx(4 * np.log(4 / 3) - 4, abs=1e-14)
    assert val == pytest.approx(-2.84927, abs=5e-6)


def test_gamma_poisson_kernel_value(gp_data):
    assert log_posterior_kernel(gamma_poisson(2, 1), [1.0], gp_data) == pytest.approx(-4.0, abs=1e-14)


@pytest.mark.parametrize("theta", [0.0, -1.0, np.nan])
def test_kernel_domain_guard(exp_data, theta):
    with pytest.raises(DomainError):
        log_posterior_kernel(exponential_expprior(), [theta], exp_data)


# ---------------------------------------------------------------- derivatives


def test_exponential_closed_forms(exp_data):
    b = derivatives(exponential_expprior(), [4 / 3], exp_data, max_order=4)
    assert b.grad[0] == pytest.approx(1.0, abs=1e-14)
    assert b.hessian[0, 0] == pytest.approx(-2.25, abs=1e-14)
    assert b.third[0] == pytest.approx(3.375, abs=1e-13)
    assert b.fourth[0] == pytest.approx(-6 * 4 / (4 / 3) ** 4, abs=1e-12)
    assert not b.includes_prior


def test_exponential_grad_machine_precision():
    rng = np.random.default_rng(1)
    x = rng.exponential(0.5, size=37)
    d = DataSet(x)
    for theta in rng.uniform(0.2, 5.0, size=10):
        g = derivatives(exponential_expprior(), [theta], d, 1).grad[0]
        assert g == pytest.approx(37 / theta - np.sum(x), rel=4 * np.finfo(float).eps, abs=1e-12)


def test_gaussian_prior_added_to_first_two_orders(probit_data):
    m = probit_gaussian(25.0)
    theta = np.array([0.1, -0.4, 0.7])
    plain = derivatives(m, theta, probit_data, 3)
    full = derivatives(m, theta, probit_data, 3, include_prior=True)
    np.testing.assert_allclose(full.grad - plain.grad, -theta / 25.0, atol=1e-13)
    np.testing.assert_allclose(full.hessian - plain.hessian, -np.eye(3) / 25.0, atol=1e-13)
    np.testing.assert_array_equal(full.third, plain.third)
    assert full.includes_prior


def test_hessian_exactly_symmetric(probit_data):
    h = derivatives(probit_gaussian(), np.array([0.3, 1.0, -2.0]), probit_data, 2).hessian
    np.testing.assert_array_equal(h, h.T)


def test_order_bounds(exp_data):
    with pytest.raises(UnsupportedOrder):
        derivatives(exponential_expprior(), [1.0], exp_data, max_order=5)


def test_missing_order_without_finite_differences(exp_data):
    m = exponential_expprior()
    trimmed = type(m)(**{**m.__dict__, "loglik_derivs": {k: v for k, v in m.loglik_derivs.items() if k < 4}})
    with pytest.raises(UnsupportedOrder):
        derivatives(trimmed, [1.0], exp_data, 4, allow_finite_differences=False)
    b = derivatives(trimmed, [1.0], exp_data, 4)
    assert b.fourth[0] == pytest.approx(-24.0, rel=1e-6)


# ---------------------------------------------------------------- finite differences


def test_fd_cubic_polynomial():
    b = finite_diff_derivatives(lambda t: t[0] ** 3, [2.0], 3)
    assert b.third[0] == pytest.approx(6.0, abs=1e-6)


def test_fd_mixed_polynomial():
    b = finite_diff_derivatives(lambda t: t[0] ** 2 * t[1], [1.0, 1.0], 3)
    # packed order: (0,0,0), (0,0,1), (0,1,1), (1,1,1)
    np.testing.assert_allclose(b.third, [0.0, 2.0, 0.0, 0.0], atol=1e-6)


def test_fd_matches_exponential_hessian(exp_data):
    m = exponential_expprior()
    b = finite_diff_derivatives(lambda t: m.loglik(m.check(t), exp_data), [4 / 3], 2)
    assert b.hessian[0, 0] == pytest.approx(-2.25, abs=1e-6)


def test_fd_fourth_order_polynomial():
    b = finite_diff_derivatives(lambda t: t[0] ** 2 * t[1] ** 2, [0.5, -1.0], 4)
    full = tensor.unpack(b.fourth, 2, 4)
    assert full[0, 0, 1, 1] == pytest.approx(4.0, abs=1e-3)
    assert full[0, 1, 0, 1] == full[0, 0, 1, 1]


def test_fd_stencil_leaving_domain(exp_data):
    m = exponential_expprior()
    with pytest.raises(NonFiniteEvaluation):
        finite_diff_derivatives(lambda t: m.loglik(m.check(t), exp_data), [1e-7], 1, step=1e-6)


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_derivatives(lambda t: t[0], [1.0], 1, step=0.0)


def _fd_jacobian(fn, theta):
    """Central differences of a vector-valued function, one column per coordinate."""
    cols = []
    out = np.ravel(fn(theta))
    for k in range(out.size):
        cols.append(finite_diff_derivatives(lambda t, k=k: np.ravel(fn(t))[k], theta, 1).grad)
    return np.array(cols)


def _check_against_fd(model, data, theta):
    b = derivatives(model, theta, data, 3)
    d = theta.size
    f = lambda t: model.loglik(model.check(t), data)  # noqa: E731
    grad_fd = finite_diff_derivatives(f, theta, 1).grad
    hess_fd = _fd_jacobian(lambda t: model.loglik_derivs[1](model.check(t), data), theta)
    third_fd = _fd_jacobian(lambda t: model.loglik_derivs[2](model.check(t), data), theta).reshape(d, d, d)
    assert rel_err(b.grad, grad_fd) < 1e-5
    assert rel_err(b.hessian, hess_fd) < 1e-5
    assert rel_err(b.third_full(), third_fd) < 1e-5
    # prior pieces
    p_fd = finite_diff_derivatives(lambda t: model.logprior(model.check(t)), theta, 2)
    assert rel_err(model.logprior_derivs[1](theta), p_fd.grad) < 1e-5 or np.max(np.abs(p_fd.grad)) < 1e-8
    ph = np.asarray(model.logprior_derivs[2](theta))
    assert np.max(np.abs(ph - p_fd.hessian)) <= 1e-5 * max(1.0, np.max(np.abs(ph)))


def builtin_cases():
    rng = np.random.default_rng(99)
    exp_d = DataSet(rng.exponential(0.5, 50))
    gp_d = DataSet(rng.poisson(2.0, 40).astype(float))
    yield "exponential", exponential_expprior(1.0), exp_d, lambda r: r.uniform(0.3, 6.0, 1)
    yield "gamma_poisson", gamma_poisson(2.0, 1.0), gp_d, lambda r: r.uniform(0.3, 6.0, 1)
    yield "probit", probit_gaussian(25.0), probit_fixture(60, 5), lambda r: r.normal(0, 1.0, 3)
    yield "logit", logit_gaussian(25.0), probit_fixture(60, 6), lambda r: r.normal(0, 1.5, 3)


@pytest.mark.parametrize("name,model,data,draw", list(builtin_cases()), ids=lambda v: v if isinstance(v, str) else "")
def test_builtin_derivatives_match_finite_differences(name, model, data, draw):
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(20):
        _check_against_fd(model, data, draw(rng))


@pytest.mark.parametrize("model", [probit_gaussian(), logit_gaussian()], ids=["probit", "logit"])
def test_regression_fourth_order_matches_fd_of_third(model):
    data = probit_fixture(40, 8)
    theta = np.array([0.2, -0.5, 0.9])
    b = derivatives(model, theta, data, 4)
    full_fd = _fd_jacobian(lambda t: tensor.unpack(model.loglik_derivs[3](t, data), 3, 3), theta)
    assert rel_err(b.fourth_full(), full_fd.reshape((3,) * 4)) < 1e-5


def test_third_tensor_permutation_symmetry(probit_data):
    full = derivatives(probit_gaussian(), np.array([0.1, 0.2, 0.3]), probit_data, 3).third_full()
    for p in permutations(range(3)):
        np.testing.assert_array_equal(full, np.transpose(full, p))


def test_probit_extreme_linear_predictor_is_finite():
    data = DataSet([0.0, 1.0], np.array([[40.0], [-40.0]]))
    b = derivatives(probit_gaussian(), np.array([1.0]), data, 3)
    assert np.all(np.isfinite(b.grad)) and np.all(np.isfinite(b.hessian)) and np.all(np.isfinite(b.third))
    assert np.isfinite(log_posterior_kernel(probit_gaussian(), [1.0], data))


def test_inverse_mills_tail():
    # phi(x)/Phi(x) ~ -x for very negative x
    assert inverse_mills(np.array([-30.0]))[0] == pytest.approx(30.0333, rel=1e-4)
    assert inverse_mills(np.array([0.0]))[0] == pytest.approx(np.sqrt(2 / np.pi), rel=1e-14)


# ---------------------------------------------------------------- CSV


def test_load_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y,b\n1,0,2\n3,1,4\n")
    d = load_csv(p, "y", intercept=True)
    np.testing.assert_array_equal(d.responses, [0, 1])
    np.testing.assert_array_equal(d.covariates, [[1, 1, 2], [1, 3, 4]])
    assert d.column_names == ("(Intercept)", "a", "b")


def test_load_csv_missing_response(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(DataError, match="response column not found"):
        load_csv(p, "y")
