from __future__ import annotations

import numpy as np
import pytest
from scipy import special

from skewmodal import tensor
from skewmodal.model import DataSet, ModelSpec, probit_gaussian

EXP_X = (0.5, 0.25, 0.5, 0.75)
GP_X = (1.0, 2.0, 0.0)

_ACCEPTANCE_LINES: list = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def exp_data():
    return DataSet(np.array(EXP_X))


@pytest.fixture
def gp_data():
    return DataSet(np.array(GP_X))


def probit_fixture(n: int, seed: int, theta=(-0.3, 0.8, -0.6)) -> DataSet:
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta, dtype=float)
    z = np.column_stack([np.ones(n), rng.normal(size=(n, theta.size - 1))])
    y = (rng.random(n) < special.ndtr(z @ theta)).astype(float)
    return DataSet(y, z)


@pytest.fixture
def probit_data():
    return probit_fixture(100, 2024)


def gaussian_mean_model(prior_variance: float = 4.0, dim: int = 2) -> ModelSpec:
    """Unit-variance Gaussian likelihood for a mean vector with N(0, v) prior.

    The log-posterior kernel is quadratic, so third derivatives vanish.
    Responses are stored as covariate rows (one observation per row).
    """
    v = prior_variance

    def loglik(t, data):
        r = data.covariates - t
        return -0.5 * float(np.sum(r * r))

    return ModelSpec(
        name="gaussian_mean",
        loglik=loglik,
        logprior=lambda t: -0.5 * float(t @ t) / v,
        loglik_derivs={
            1: lambda t, data: np.sum(data.covariates - t, axis=0),
            2: lambda t, data: -data.n * np.eye(t.size),
            3: lambda t, data: np.zeros(tensor.n_unique(t.size, 3)),
        },
        logprior_derivs={1: lambda t: -t / v, 2: lambda t: -np.eye(t.size) / v},
        guard=lambda t: True,
        dim=dim,
        prior_polynomial_degree=2,
    )


@pytest.fixture
def gaussian_model():
    return gaussian_mean_model()


@pytest.fixture
def gaussian_data():
    rng = np.random.default_rng(7)
    return DataSet(np.zeros(30), rng.normal(1.0, 1.0, size=(30, 2)))


@pytest.fixture
def probit_model():
    return probit_gaussian(25.0)
