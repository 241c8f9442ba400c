"""Maximum a posteriori estimation by damped Newton iteration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import DomainError, IndefiniteHessian, NotConverged
from .model import DataSet, ModelSpec, derivatives, log_posterior_kernel

ARMIJO = 1e-4
SHRINK = 0.5
MAX_HALVINGS = 50
DAMPING_START = 1e-6
DAMPING_MAX = 1e12


@dataclass(frozen=True)
class MapResult:
    """Output of :func:`find_map`.

    ``observed_info`` is minus the Hessian of the log-posterior kernel, so it
    includes prior curvature.  ``cholesky`` is the lower factor of
    ``observed_info / n``.
    """

    theta_hat: np.ndarray
    grad_norm: float
    observed_info: np.ndarray
    cholesky: Optional[np.ndarray]
    iterations: int
    converged: bool
    n: int
    kernel: float
    kernel_trace: tuple = field(default=(), repr=False)

    @property
    def dim(self) -> int:
        return int(self.theta_hat.size)

    @property
    def log_det_info(self) -> float:
        """log |J| computed from the stored factor of J/n."""
        return float(2.0 * np.sum(np.log(np.diag(self.cholesky))) + self.dim * np.log(self.n))


def _safe_kernel(model: ModelSpec, theta: np.ndarray, data: DataSet) -> float:
    if not np.all(np.isfinite(theta)) or not model.guard(theta):
        return -np.inf
    try:
        v = log_posterior_kernel(model, theta, data)
    except (DomainError, FloatingPointError):
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def _ascent_direction(g: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Newton direction, with Levenberg damping when -hess is not PD."""
    neg = -hess
    lam = 0.0
    eye = np.eye(g.size)
    while True:
        try:
            c = linalg.cho_factor(neg + lam * eye, lower=True)
            step = linalg.cho_solve(c, g)
            if g @ step > 0 or not np.any(g):
                return step
        except linalg.LinAlgError:
            pass
        lam = DAMPING_START if lam == 0.0 else 2.0 * lam
        if lam > DAMPING_MAX * max(1.0, np.max(np.abs(neg))):
            return g.copy()


def find_map(
    model: ModelSpec,
    data: DataSet,
    init=None,
    tol: float = 1e-8,
    max_iter: int = 100,
    strict: bool = False,
) -> MapResult:
    """Maximize ``loglik + logprior`` by Newton steps with Armijo backtracking.

    Convergence means ``max|grad| <= tol * max(1, |kernel|)``.  Once reached,
    one extra full Newton step is tried and kept only if it lowers the
    gradient without lowering the kernel; this brings well-conditioned
    problems to rounding level.  Steps leaving the model domain are halved
    like any rejected step.

    With ``strict=False`` a non-converged run returns its best point with
    ``converged=False``; with ``strict=True`` it raises :class:`NotConverged`
    carrying that result.  :class:`IndefiniteHessian` is raised when the final
    observed information has no Cholesky factor.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    model.validate(data)
    theta = model.check(model.init(data) if init is None else init).copy()
    d = model.dimension(data)
    if theta.size != d:
        raise ValueError(f"init has length {theta.size}, model dimension is {d}")

    kern = _safe_kernel(model, theta, data)
    trace = [kern]
    converged = False
    iterations = 0
    bundle = derivatives(model, theta, data, 2, include_prior=True)
    while True:
        g = bundle.grad
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol * max(1.0, abs(kern)):
            converged = True
            break
        if iterations >= max_iter:
            break
        direction = _ascent_direction(g, bundle.hessian)
        slope = float(g @ direction)
        step = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + step * direction
            kc = _safe_kernel(model, cand, data)
            if kc >= kern + ARMIJO * step * slope:
                accepted = True
                break
            step *= SHRINK
        if not accepted:
            break
        theta, kern = cand, kc
        trace.append(kern)
        iterations += 1
        bundle = derivatives(model, theta, data, 2, include_prior=True)

    if converged:
        theta, kern, bundle = _polish(model, data, theta, kern, bundle)
        trace.append(kern)

    info = -bundle.hessian
    info = 0.5 * (info + info.T)
    n = data.n
    try:
        chol = linalg.cholesky(info / n, lower=True)
    except linalg.LinAlgError:
        raise IndefiniteHessian(
            f"observed information at theta={theta.tolist()} is not positive definite"
        ) from None
    result = MapResult(
        theta_hat=theta,
        grad_norm=float(np.max(np.abs(bundle.grad))),
        observed_info=info,
        cholesky=chol,
        iterations=iterations,
        converged=converged,
        n=n,
        kernel=float(kern),
        kernel_trace=tuple(trace),
    )
    if not converged and strict:
        raise NotConverged(
            f"no convergence after {iterations} iterations (grad norm {result.grad_norm:.3g})",
            result=result,
        )
    return result


def _polish(model, data, theta, kern, bundle):
    g = bundle.grad
    if not np.any(g):
        return theta, kern, bundle
    try:
        step = linalg.solve(-bundle.hessian, g, assume_a="sym")
    except linalg.LinAlgError:
        return theta, kern, bundle
    cand = theta + step
    kc = _safe_kernel(model, cand, data)
    if not kc >= kern:
        return theta, kern, bundle
    cb = derivatives(model, cand, data, 2, include_prior=True)
    if np.max(np.abs(cb.grad)) < np.max(np.abs(g)):
        return cand, kc, cb
    return theta, kern, bundle
