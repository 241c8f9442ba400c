"""Skew-symmetric posterior approximations and their densities.

A skew-symmetric approximation has density

    2 * phi_d(x; center, omega) * F(alpha(x - center)),
    alpha(u) = sum_{stl} A_stl u_s u_t u_l + sum_s b_s u_s,

where ``F`` is a symmetric cdf (``F(-x) = 1 - F(x)``).  Because ``alpha`` is
odd, the density is a valid pdf for any cubic tensor ``A`` and vector ``b``.

Two parametrizations are supported.  ``theta_scale`` lives on the parameter
itself.  ``h_scale`` uses the centred and rescaled coordinate
``h = sqrt(n) * (theta - anchor)``, with ``anchor`` the MAP for the
skew-modal approximation and the reference point for the theoretical one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, special

from . import tensor
from .errors import IndefiniteHessian, IndefinitePrecision, NotConverged
from .map_estimate import MapResult
from .model import DataSet, ModelSpec, derivatives

FORMAT_VERSION = 1
SCALES = ("h_scale", "theta_scale")
PROVENANCES = ("skew_modal", "theoretical_sks", "gaussian")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SkewingFunction:
    """Symmetric cdf used to skew the Gaussian factor.

    ``eta`` is the slope of the cdf at zero.
    """

    kind: str = "probit_cdf"

    def __post_init__(self):
        if self.kind not in ("probit_cdf", "inverse_logit"):
            raise ValueError(f"unknown skewing function {self.kind!r}")

    @property
    def eta(self) -> float:
        return 1.0 / np.sqrt(2.0 * np.pi) if self.kind == "probit_cdf" else 0.25

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return special.ndtr(x) if self.kind == "probit_cdf" else special.expit(x)

    def logcdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "probit_cdf":
            return special.log_ndtr(x)
        return -np.logaddexp(0.0, -x)


PROBIT = SkewingFunction("probit_cdf")
LOGIT = SkewingFunction("inverse_logit")


def _cholesky(omega: np.ndarray, err=IndefinitePrecision) -> np.ndarray:
    try:
        return linalg.cholesky(omega, lower=True)
    except linalg.LinAlgError:
        raise err("covariance matrix is not positive definite") from None


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SkewSymmetricApprox:
    """Immutable skew-symmetric approximation.

    ``cubic`` holds the packed unique entries of ``A`` and ``linear`` holds
    ``b``.  ``anchor`` is the point the h-scale is centred at (needed only to
    move between scales); ``labels`` are optional coordinate names.
    """

    parametrization: str
    center: np.ndarray
    omega: np.ndarray
    cubic: np.ndarray
    linear: np.ndarray
    skewing: SkewingFunction
    n: int
    provenance: str
    anchor: Optional[np.ndarray] = None
    labels: Optional[tuple] = None
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.parametrization not in SCALES:
            raise ValueError(f"parametrization must be one of {SCALES}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        center = _ro(np.atleast_1d(self.center))
        d = center.size
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if omega.shape != (d, d):
            raise ValueError(f"omega must be {d}x{d}")
        omega = _ro(0.5 * (omega + omega.T))
        cubic = _ro(np.atleast_1d(self.cubic))
        if cubic.size != tensor.n_unique(d, 3):
            raise ValueError(f"cubic must have {tensor.n_unique(d, 3)} packed entries")
        linear = _ro(np.zeros(d) if self.linear is None else np.atleast_1d(self.linear))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "cubic", cubic)
        object.__setattr__(self, "linear", linear)
        if self.anchor is not None:
            object.__setattr__(self, "anchor", _ro(np.atleast_1d(self.anchor)))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "chol", _ro(_cholesky(omega)))

    @property
    def dim(self) -> int:
        return int(self.center.size)

    @property
    def location(self) -> np.ndarray:
        return self.center

    def alpha(self, u) -> np.ndarray:
        """Odd polynomial inside the skewing cdf, at displacement(s) ``u``."""
        u = np.asarray(u, dtype=float)
        return tensor.contract3(self.cubic, u) + u @ self.linear

    def gaussian_log_density(self, x) -> np.ndarray:
        return _gauss_logpdf(np.asarray(x, dtype=float) - self.center, self.chol)

    def log_density(self, x) -> np.ndarray:
        return log_density(self, x)

    def density(self, x) -> np.ndarray:
        return np.exp(log_density(self, x))

    def to_dict(self) -> dict:
        d = self.dim
        return {
            "format": "skew_symmetric_approx",
            "version": FORMAT_VERSION,
            "parametrization": self.parametrization,
            "provenance": self.provenance,
            "n": int(self.n),
            "center": self.center.tolist(),
            "omega": self.omega.ravel().tolist(),
            "dim": d,
            "cubic": {
                "indices": tensor.unique_indices(d, 3).tolist(),
                "values": self.cubic.tolist(),
            },
            "linear": self.linear.tolist(),
            "skewing": {"kind": self.skewing.kind, "eta": self.skewing.eta},
            "anchor": None if self.anchor is None else self.anchor.tolist(),
            "labels": None if self.labels is None else list(self.labels),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SkewSymmetricApprox":
        if doc.get("format") != "skew_symmetric_approx" or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 skew_symmetric_approx document")
        d = int(doc["dim"])
        cubic = _packed_from_entries(doc["cubic"], d)
        return cls(
            parametrization=doc["parametrization"],
            center=np.array(doc["center"], dtype=float),
            omega=np.array(doc["omega"], dtype=float).reshape(d, d),
            cubic=cubic,
            linear=np.array(doc["linear"], dtype=float),
            skewing=SkewingFunction(doc["skewing"]["kind"]),
            n=int(doc["n"]),
            provenance=doc["provenance"],
            anchor=None if doc.get("anchor") is None else np.array(doc["anchor"], dtype=float),
            labels=doc.get("labels"),
        )


def _packed_from_entries(block: dict, d: int) -> np.ndarray:
    idx = [tuple(int(i) for i in t) for t in block["indices"]]
    vals = np.array(block["values"], dtype=float)
    lookup = {tuple(t): k for k, t in enumerate(tensor.unique_indices(d, 3).tolist())}
    out = np.zeros(tensor.n_unique(d, 3))
    for t, v in zip(idx, vals):
        out[lookup[tuple(sorted(t))]] = v
    return out


def _gauss_logpdf(diff: np.ndarray, chol: np.ndarray) -> np.ndarray:
    d = chol.shape[0]
    single = diff.ndim == 1
    z = linalg.solve_triangular(chol, np.atleast_2d(diff).T, lower=True)
    out = -0.5 * d * LOG_2PI - np.sum(np.log(np.diag(chol))) - 0.5 * np.sum(z * z, axis=0)
    return out[0] if single else out


def log_density(approx: SkewSymmetricApprox, point) -> np.ndarray:
    """``log 2 + log phi_d(x; center, omega) + log F(alpha(x - center))``.

    Accepts one point of shape (d,) or a stack of shape (m, d).  The
    Gaussian provenance skips the skewing factor, so it reproduces the plain
    Gaussian log-density exactly.
    """
    x = np.asarray(point, dtype=float)
    if x.shape[-1] != approx.dim:
        raise ValueError(f"point has {x.shape[-1]} coordinates, approximation has {approx.dim}")
    base = approx.gaussian_log_density(x)
    if approx.provenance == "gaussian":
        return base
    a = approx.alpha(x - approx.center)
    return np.log(2.0) + base + approx.skewing.logcdf(a)


def _third_loglik(model: ModelSpec, theta, data: DataSet) -> np.ndarray:
    return derivatives(model, theta, data, 3, include_prior=False).third


def _require_converged(map_result: MapResult):
    if not map_result.converged:
        raise NotConverged("the MAP search did not converge", result=map_result)
    if map_result.cholesky is None:
        raise IndefiniteHessian("observed information at the MAP is not positive definite")


def _labels(data: DataSet):
    return data.column_names


def build_skew_modal(
    model: ModelSpec,
    data: DataSet,
    map_result: MapResult,
    skewing: SkewingFunction = PROBIT,
    scale: str = "theta_scale",
) -> SkewSymmetricApprox:
    """Skew-modal approximation built from derivatives at the MAP.

    The covariance comes from the observed information of the log-posterior
    kernel (prior curvature included) and the cubic coefficient from the
    third derivative of the log-likelihood.
    """
    _require_converged(map_result)
    n = data.n
    third = _third_loglik(model, map_result.theta_hat, data)
    info = map_result.observed_info
    eta = skewing.eta
    if scale == "theta_scale":
        center = map_result.theta_hat
        omega = _spd_inverse(info)
        cubic = third / (12.0 * eta)
    elif scale == "h_scale":
        center = np.zeros(map_result.dim)
        omega = _spd_inverse(info / n)
        cubic = third / (12.0 * eta * np.sqrt(n) * n)
    else:
        raise ValueError(f"scale must be one of {SCALES}")
    return SkewSymmetricApprox(
        scale, center, omega, cubic, np.zeros(map_result.dim), skewing, n,
        "skew_modal", anchor=map_result.theta_hat, labels=_labels(data),
    )


def build_gaussian_laplace(map_result: MapResult, scale: str = "theta_scale", skewing: SkewingFunction = PROBIT) -> SkewSymmetricApprox:
    """Gaussian Laplace approximation N(MAP, J^{-1}) in the requested scale."""
    _require_converged(map_result)
    d, n = map_result.dim, map_result.n
    if scale == "theta_scale":
        center, omega = map_result.theta_hat, _spd_inverse(map_result.observed_info)
    elif scale == "h_scale":
        center, omega = np.zeros(d), _spd_inverse(map_result.observed_info / n)
    else:
        raise ValueError(f"scale must be one of {SCALES}")
    return SkewSymmetricApprox(
        scale, center, omega, np.zeros(tensor.n_unique(d, 3)), np.zeros(d), skewing, n,
        "gaussian", anchor=map_result.theta_hat,
    )


def build_theoretical_sks(
    model: ModelSpec,
    data: DataSet,
    theta_star,
    skewing: SkewingFunction = PROBIT,
) -> SkewSymmetricApprox:
    """Skew-symmetric approximation centred on a known reference point.

    Works in ``h = sqrt(n) (theta - theta_star)``.  The shift ``xi`` is one
    Newton step from ``theta_star`` (rescaled), the precision corrects the
    likelihood information by the third derivative along ``xi``, and the odd
    polynomial gains a linear term ``3 A_stl xi_t xi_l``.  A precision that is
    not positive definite raises :class:`IndefinitePrecision`.
    """
    theta_star = model.check(theta_star)
    model.validate(data)
    n = data.n
    rn = np.sqrt(n)
    bundle = derivatives(model, theta_star, data, 3, include_prior=False)
    prior_grad = np.asarray(model.logprior_derivs[1](theta_star), dtype=float)
    u = (bundle.grad + prior_grad) / rn
    info = -bundle.hessian
    try:
        c = linalg.cho_factor(info, lower=True)
    except linalg.LinAlgError:
        raise IndefinitePrecision("likelihood information at theta_star is not positive definite") from None
    xi = n * linalg.cho_solve(c, u)
    d = xi.size
    third_full = tensor.contract3_vec(bundle.third, xi, d)
    precision = info / n - third_full / n / rn
    precision = 0.5 * (precision + precision.T)
    try:
        pc = linalg.cho_factor(precision, lower=True)
    except linalg.LinAlgError:
        raise IndefinitePrecision(
            f"corrected precision at theta_star={theta_star.tolist()} is not positive definite"
        ) from None
    omega = linalg.cho_solve(pc, np.eye(d))
    cubic = bundle.third / (12.0 * skewing.eta * rn * n)
    linear = 3.0 * tensor.contract3_vec(cubic, xi, d) @ xi
    return SkewSymmetricApprox(
        "h_scale", xi, omega, cubic, linear, skewing, n, "theoretical_sks",
        anchor=theta_star, labels=_labels(data),
    )


def _spd_inverse(mat: np.ndarray) -> np.ndarray:
    try:
        c = linalg.cho_factor(mat, lower=True)
    except linalg.LinAlgError:
        raise IndefiniteHessian("observed information is not positive definite") from None
    inv = linalg.cho_solve(c, np.eye(mat.shape[0]))
    return 0.5 * (inv + inv.T)


def to_scale(approx: SkewSymmetricApprox, scale: str) -> SkewSymmetricApprox:
    """Re-express an approximation in the other parametrization.

    Uses ``theta = anchor + h / sqrt(n)``; log-densities then differ by
    ``(d/2) log n``.
    """
    if scale == approx.parametrization:
        return approx
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}")
    if approx.anchor is None:
        raise ValueError("an anchor point is needed to change scale")
    rn = np.sqrt(approx.n)
    if scale == "theta_scale":
        center = approx.anchor + approx.center / rn
        omega = approx.omega / approx.n
        cubic = approx.cubic * rn ** 3
        linear = approx.linear * rn
    else:
        center = rn * (approx.center - approx.anchor)
        omega = approx.omega * approx.n
        cubic = approx.cubic / rn ** 3
        linear = approx.linear / rn
    return SkewSymmetricApprox(
        scale, center, omega, cubic, linear, approx.skewing, approx.n,
        approx.provenance, anchor=approx.anchor, labels=approx.labels,
    )
