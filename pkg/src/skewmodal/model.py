"""Bayesian parametric models: data containers, derivative suppliers, builtins.

Every log-likelihood excludes additive constants that depend only on the data
(for instance ``-sum(log x_i!)`` in the Poisson case) and every log-prior
excludes its normalizing constant.  MAP points, derivatives and density
ratios are unaffected by either convention.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from . import tensor
from .errors import DataError, DomainError, NonFiniteEvaluation, UnsupportedOrder

EPS = np.finfo(float).eps


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataSet:
    """Observations ``responses`` (length n) with optional n x p covariates."""

    responses: np.ndarray
    covariates: Optional[np.ndarray] = None
    column_names: Optional[tuple] = None

    def __post_init__(self):
        y = _frozen(np.ravel(self.responses))
        object.__setattr__(self, "responses", y)
        if y.size < 1:
            raise DataError("a data set needs at least one observation")
        if self.covariates is not None:
            z = _frozen(np.atleast_2d(self.covariates))
            if z.shape[0] != y.size:
                raise DataError(
                    f"covariate matrix has {z.shape[0]} rows but there are {y.size} responses"
                )
            object.__setattr__(self, "covariates", z)
        if self.column_names is not None:
            object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n(self) -> int:
        return int(self.responses.size)

    def prefix(self, n: int) -> "DataSet":
        """First ``n`` observations, keeping covariates aligned."""
        z = None if self.covariates is None else self.covariates[:n]
        return DataSet(self.responses[:n], z, self.column_names)


@dataclass(frozen=True)
class DerivativeBundle:
    """Derivatives of the log-likelihood (optionally plus log-prior) at ``point``.

    ``hessian`` stores the second derivative itself (so the observed
    information is ``-hessian``).  ``third`` and ``fourth`` use the packed
    symmetric layout of :mod:`skewmodal.tensor`.
    """

    point: np.ndarray
    grad: np.ndarray
    hessian: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None
    fourth: Optional[np.ndarray] = None
    includes_prior: bool = False

    @property
    def dim(self) -> int:
        return int(self.point.size)

    def third_full(self) -> np.ndarray:
        return tensor.unpack(self.third, self.dim, 3)

    def fourth_full(self) -> np.ndarray:
        return tensor.unpack(self.fourth, self.dim, 4)


# analytic supplier: (theta, data) -> array for one order
Supplier = Callable[[np.ndarray, DataSet], np.ndarray]
PriorSupplier = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """A parametric model with log-likelihood, log-prior and their derivatives.

    ``loglik_derivs[k]`` returns the order-k derivative of the log-likelihood
    (vector, matrix, then packed tensors for k = 3, 4).  ``logprior_derivs``
    works the same way for the log-prior; missing prior orders >= 3 are
    treated as zero only when ``prior_polynomial_degree`` says so.
    """

    name: str
    loglik: Callable[[np.ndarray, DataSet], float]
    logprior: Callable[[np.ndarray], float]
    loglik_derivs: Mapping[int, Supplier]
    logprior_derivs: Mapping[int, PriorSupplier]
    guard: Callable[[np.ndarray], bool]
    dim: Optional[int] = None
    validate: Callable[[DataSet], None] = lambda data: None
    default_init: Optional[Callable[[DataSet], np.ndarray]] = None
    prior_polynomial_degree: Optional[int] = None
    params: Mapping[str, float] = field(default_factory=dict)

    def dimension(self, data: Optional[DataSet] = None) -> int:
        if self.dim is not None:
            return self.dim
        if data is None or data.covariates is None:
            raise DataError(f"model {self.name!r} needs covariates to fix its dimension")
        return int(data.covariates.shape[1])

    def check(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if not np.all(np.isfinite(theta)) or not self.guard(theta):
            raise DomainError(f"theta={theta.tolist()} is outside the domain of {self.name}")
        return theta

    def init(self, data: DataSet) -> np.ndarray:
        if self.default_init is not None:
            return np.asarray(self.default_init(data), dtype=float)
        return np.zeros(self.dimension(data))


def log_posterior_kernel(model: ModelSpec, theta, data: DataSet) -> float:
    """``loglik(theta) + logprior(theta)`` up to data-only constants."""
    theta = model.check(theta)
    return float(model.loglik(theta, data) + model.logprior(theta))


def derivatives(
    model: ModelSpec,
    theta,
    data: DataSet,
    max_order: int = 3,
    include_prior: bool = False,
    allow_finite_differences: bool = True,
) -> DerivativeBundle:
    """Analytic derivatives of the log-likelihood up to ``max_order``.

    With ``include_prior`` the log-prior derivatives are added to every
    populated order.  A missing analytic order is obtained by central
    differences of the next-lower analytic order unless
    ``allow_finite_differences`` is false.
    """
    if not 1 <= max_order <= 4:
        raise UnsupportedOrder(f"max_order must be in 1..4, got {max_order}")
    theta = model.check(theta)
    d = theta.size
    out = {}
    for k in range(1, max_order + 1):
        if k in model.loglik_derivs:
            out[k] = np.asarray(model.loglik_derivs[k](theta, data), dtype=float)
        elif allow_finite_differences and (k - 1) in model.loglik_derivs and k >= 3:
            out[k] = _fd_raise_order(lambda t: model.loglik_derivs[k - 1](model.check(t), data), theta, k)
        else:
            raise UnsupportedOrder(f"order {k} is not available for {model.name}")
        if include_prior:
            if k in model.logprior_derivs:
                out[k] = out[k] + np.asarray(model.logprior_derivs[k](theta), dtype=float)
            elif model.prior_polynomial_degree is not None and k > model.prior_polynomial_degree:
                pass
            else:
                raise UnsupportedOrder(f"log-prior order {k} is not available for {model.name}")
    hess = out.get(2)
    if hess is not None:
        hess = 0.5 * (hess + hess.T)
    return DerivativeBundle(
        point=_frozen(theta),
        grad=_frozen(out[1]),
        hessian=None if hess is None else _frozen(hess),
        third=_frozen(out[3]) if 3 in out else None,
        fourth=_frozen(out[4]) if 4 in out else None,
        includes_prior=include_prior,
    )


def default_step(order: int, theta: np.ndarray) -> np.ndarray:
    """Central-difference step eps^(1/(k+2)) * max(1, |theta_i|)."""
    return EPS ** (1.0 / (order + 2)) * np.maximum(1.0, np.abs(theta))


def _central_sum(f, theta, idx_tuple, h) -> float:
    # product of one-dimensional central difference operators
    k = len(idx_tuple)
    total = 0.0
    for signs in np.ndindex(*(2,) * k):
        sgn = np.where(np.array(signs) == 0, 1.0, -1.0)
        x = theta.copy()
        for s, i in zip(sgn, idx_tuple):
            x[i] += s * h[i]
        try:
            v = float(f(x))
        except DomainError as exc:
            raise NonFiniteEvaluation(f"stencil point {x.tolist()} left the domain") from exc
        if not np.isfinite(v):
            raise NonFiniteEvaluation(f"non-finite value at stencil point {x.tolist()}")
        total += np.prod(sgn) * v
    return total / np.prod([2.0 * h[i] for i in idx_tuple])


def finite_diff_derivatives(f: Callable[[np.ndarray], float], theta, order: int, step: Optional[float] = None) -> DerivativeBundle:
    """Central-difference derivatives of a scalar function up to ``order``.

    Mixed partials use the product of one-dimensional central operators,
    so each unique index tuple is estimated once and the result is
    symmetric by construction.  ``step`` overrides the default base step;
    it is scaled per coordinate by ``max(1, |theta_i|)``.
    """
    if not 1 <= order <= 4:
        raise UnsupportedOrder(f"order must be in 1..4, got {order}")
    if step is not None and step <= 0:
        raise ValueError("step must be positive")
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
    d = theta.size

    def h_for(k):
        if step is None:
            return default_step(k, theta)
        return step * np.maximum(1.0, np.abs(theta))

    h1 = h_for(1)
    grad = np.array([_central_sum(f, theta, (i,), h1) for i in range(d)])
    hess = third = fourth = None
    if order >= 2:
        h2 = h_for(2)
        hess = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                hess[i, j] = hess[j, i] = _central_sum(f, theta, (i, j), h2)
    if order >= 3:
        h3 = h_for(3)
        third = np.array([_central_sum(f, theta, tuple(t), h3) for t in tensor.unique_indices(d, 3)])
    if order >= 4:
        h4 = h_for(4)
        fourth = np.array([_central_sum(f, theta, tuple(t), h4) for t in tensor.unique_indices(d, 4)])
    return DerivativeBundle(
        point=_frozen(theta),
        grad=_frozen(grad),
        hessian=None if hess is None else _frozen(hess),
        third=None if third is None else _frozen(third),
        fourth=None if fourth is None else _frozen(fourth),
    )


def _fd_raise_order(lower: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, k: int) -> np.ndarray:
    """Order-k packed tensor from central differences of the order-(k-1) supplier."""
    d = theta.size
    h = EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(theta))
    slices = []
    for i in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h[i]
        tm[i] -= h[i]
        lo_p, lo_m = np.asarray(lower(tp)), np.asarray(lower(tm))
        if k - 1 >= 3:
            lo_p, lo_m = tensor.unpack(lo_p, d, k - 1), tensor.unpack(lo_m, d, k - 1)
        slices.append((lo_p - lo_m) / (2 * h[i]))
    full = np.stack(slices, axis=-1)
    return tensor.pack(full)


# ---------------------------------------------------------------------------
# builtin models


def _positive(theta: np.ndarray) -> bool:
    return theta.size == 1 and theta[0] > 0


def exponential_expprior(rate_prior: float = 1.0) -> ModelSpec:
    """Exponential likelihood with rate theta and an Exp(rate_prior) prior."""

    def validate(data: DataSet):
        if data.covariates is not None:
            raise DataError("the exponential model takes no covariates")
        if np.any(data.responses <= 0):
            raise DataError("exponential responses must be strictly positive")

    def stats(data):
        return data.n, float(np.sum(data.responses))

    def loglik(theta, data):
        n, sx = stats(data)
        return n * np.log(theta[0]) - theta[0] * sx

    loglik_derivs = {
        1: lambda t, data: np.array([data.n / t[0] - np.sum(data.responses)]),
        2: lambda t, data: np.array([[-data.n / t[0] ** 2]]),
        3: lambda t, data: np.array([2 * data.n / t[0] ** 3]),
        4: lambda t, data: np.array([-6 * data.n / t[0] ** 4]),
    }
    logprior_derivs = {
        1: lambda t: np.array([-rate_prior]),
        2: lambda t: np.zeros((1, 1)),
        3: lambda t: np.zeros(1),
        4: lambda t: np.zeros(1),
    }
    return ModelSpec(
        name="exponential_expprior",
        loglik=loglik,
        logprior=lambda t: -rate_prior * t[0],
        loglik_derivs=loglik_derivs,
        logprior_derivs=logprior_derivs,
        guard=_positive,
        dim=1,
        validate=validate,
        default_init=lambda data: np.array([1.0 / np.mean(data.responses)]),
        prior_polynomial_degree=1,
        params={"rate_prior": float(rate_prior)},
    )


def gamma_poisson(alpha: float = 2.0, beta: float = 1.0) -> ModelSpec:
    """Poisson likelihood with mean theta and a Gamma(alpha, beta) prior (rate form)."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")

    def validate(data: DataSet):
        if data.covariates is not None:
            raise DataError("the Poisson model takes no covariates")
        y = data.responses
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("Poisson responses must be nonnegative integers")

    def loglik(theta, data):
        return float(np.sum(data.responses)) * np.log(theta[0]) - data.n * theta[0]

    sx = lambda data: float(np.sum(data.responses))  # noqa: E731
    loglik_derivs = {
        1: lambda t, data: np.array([sx(data) / t[0] - data.n]),
        2: lambda t, data: np.array([[-sx(data) / t[0] ** 2]]),
        3: lambda t, data: np.array([2 * sx(data) / t[0] ** 3]),
        4: lambda t, data: np.array([-6 * sx(data) / t[0] ** 4]),
    }
    a1 = alpha - 1.0
    logprior_derivs = {
        1: lambda t: np.array([a1 / t[0] - beta]),
        2: lambda t: np.array([[-a1 / t[0] ** 2]]),
        3: lambda t: np.array([2 * a1 / t[0] ** 3]),
        4: lambda t: np.array([-6 * a1 / t[0] ** 4]),
    }
    return ModelSpec(
        name="gamma_poisson",
        loglik=loglik,
        logprior=lambda t: a1 * np.log(t[0]) - beta * t[0],
        loglik_derivs=loglik_derivs,
        logprior_derivs=logprior_derivs,
        guard=_positive,
        dim=1,
        validate=validate,
        default_init=lambda data: np.array([(alpha + np.sum(data.responses)) / (beta + data.n)]),
        params={"alpha": float(alpha), "beta": float(beta)},
    )


def _weighted_tensor(weights: np.ndarray, z: np.ndarray, rank: int) -> np.ndarray:
    """Packed sum_i w_i z_i^{(x)rank} for rows z_i."""
    d = z.shape[1]
    if tensor.n_unique(d, rank) * z.shape[0] <= 5_000_000:
        idx = tensor.unique_indices(d, rank)
        prod = np.ones((z.shape[0], idx.shape[0]))
        for r in range(rank):
            prod = prod * z[:, idx[:, r]]
        return weights @ prod
    letters = "stlk"[:rank]
    spec = "i," + ",".join("i" + c for c in letters) + "->" + letters
    full = np.einsum(spec, weights, *([z] * rank), optimize=True)
    idx = tensor.unique_indices(d, rank)
    return full[tuple(idx.T)].copy()


def _glm(name: str, prior_variance: float, link_weights, loglik_terms) -> ModelSpec:
    """Binary regression with independent N(0, prior_variance) coefficients.

    ``link_weights(eta, y)`` returns the per-observation derivatives of the
    log-likelihood contribution with respect to the linear predictor, orders
    1 to 4.
    """
    if prior_variance <= 0:
        raise ValueError("prior_variance must be positive")
    v = float(prior_variance)

    def validate(data: DataSet):
        if data.covariates is None:
            raise DataError(f"{name} needs a covariate matrix")
        if not np.all(np.isin(data.responses, (0.0, 1.0))):
            raise DataError("binary responses must be 0 or 1")

    def weights(theta, data, k):
        eta = data.covariates @ theta
        return link_weights(eta, data.responses)[k - 1]

    def d1(theta, data):
        return data.covariates.T @ weights(theta, data, 1)

    def d2(theta, data):
        z = data.covariates
        return (z * weights(theta, data, 2)[:, None]).T @ z

    loglik_derivs = {
        1: d1,
        2: d2,
        3: lambda t, data: _weighted_tensor(weights(t, data, 3), data.covariates, 3),
        4: lambda t, data: _weighted_tensor(weights(t, data, 4), data.covariates, 4),
    }
    logprior_derivs = {
        1: lambda t: -t / v,
        2: lambda t: -np.eye(t.size) / v,
    }
    return ModelSpec(
        name=name,
        loglik=lambda t, data: float(np.sum(loglik_terms(data.covariates @ t, data.responses))),
        logprior=lambda t: -0.5 * float(t @ t) / v,
        loglik_derivs=loglik_derivs,
        logprior_derivs=logprior_derivs,
        guard=lambda t: True,
        dim=None,
        validate=validate,
        prior_polynomial_degree=2,
        params={"prior_variance": v},
    )


def inverse_mills(x: np.ndarray) -> np.ndarray:
    """phi(x)/Phi(x), computed through erfcx so it stays finite for x << 0."""
    return np.sqrt(2.0 / np.pi) / special.erfcx(-np.asarray(x, dtype=float) / np.sqrt(2.0))


def _probit_weights(eta, y):
    s = 2.0 * y - 1.0
    x = s * eta
    lam = inverse_mills(x)
    g2 = -lam * (x + lam)
    g3 = -g2 * (x + lam) - lam * (1.0 + g2)
    g4 = -g3 * (x + lam) - 2.0 * g2 * (1.0 + g2) - lam * g3
    return s * lam, g2, s * g3, g4


def _logit_weights(eta, y):
    p = special.expit(eta)
    q = p * (1.0 - p)
    return y - p, -q, -q * (1.0 - 2.0 * p), -q * (1.0 - 6.0 * p + 6.0 * p * p)


def probit_gaussian(prior_variance: float = 25.0) -> ModelSpec:
    """Probit regression ``X_i ~ Bern(Phi(z_i' theta))`` with Gaussian prior."""
    return _glm(
        "probit_gaussian",
        prior_variance,
        _probit_weights,
        lambda eta, y: special.log_ndtr((2.0 * y - 1.0) * eta),
    )


def logit_gaussian(prior_variance: float = 25.0) -> ModelSpec:
    """Logistic regression ``X_i ~ Bern(g(z_i' theta))`` with Gaussian prior."""
    return _glm(
        "logit_gaussian",
        prior_variance,
        _logit_weights,
        lambda eta, y: y * eta - np.logaddexp(0.0, eta),
    )


BUILTIN_MODELS = {
    "exponential_expprior": exponential_expprior,
    "gamma_poisson": gamma_poisson,
    "probit_gaussian": probit_gaussian,
    "logit_gaussian": logit_gaussian,
}


def build_model(kind: str, **params) -> ModelSpec:
    try:
        ctor = BUILTIN_MODELS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    return ctor(**params)


def load_csv(
    path,
    response: str,
    intercept: bool = False,
    covariates: Optional[Sequence[str]] = None,
) -> DataSet:
    """Read a headed CSV file.

    The ``response`` column becomes the response vector; every other column
    (or just ``covariates`` when given) becomes a covariate, in file order.
    ``intercept`` prepends a column of ones named ``(Intercept)``.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, a header row is required") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if response not in header:
        raise DataError(f"response column not found: {response!r} (columns: {header})")
    cols = [c for c in header if c != response] if covariates is None else list(covariates)
    missing = [c for c in cols if c not in header]
    if missing:
        raise DataError(f"covariate columns not found: {missing}")
    try:
        table = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from None
    if table.size == 0:
        raise DataError(f"{path}: no data rows")
    y = table[:, header.index(response)]
    names = list(cols)
    z = table[:, [header.index(c) for c in cols]] if cols else None
    if intercept:
        ones = np.ones((len(y), 1))
        z = ones if z is None else np.hstack([ones, z])
        names = ["(Intercept)"] + names
    return DataSet(y, z, tuple(names) if z is not None else None)
