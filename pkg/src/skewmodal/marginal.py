"""Closed-form marginal skew-modal approximations for a coordinate subset.

Indices are 1-based throughout, so ``indices=(1,)`` selects the first
coordinate.  The marginal keeps the (C, C) block of the joint covariance and
replaces the joint cubic skewing polynomial by its conditional expectation
given the selected block, which yields an odd polynomial with both linear
(``nu1``) and cubic (``nu3``) parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import tensor
from .errors import BadIndexSet, IndefiniteHessian
from .map_estimate import MapResult
from .model import DataSet, ModelSpec
from .skew import (
    FORMAT_VERSION,
    PROBIT,
    SCALES,
    SkewingFunction,
    SkewSymmetricApprox,
    _packed_from_entries,
    _require_converged,
    _spd_inverse,
    _third_loglik,
)


def normalize_indices(indices: Sequence[int], d: int) -> tuple:
    """Validate a 1-based index set and return it as a tuple."""
    try:
        idx = tuple(int(i) for i in indices)
    except (TypeError, ValueError):
        raise BadIndexSet(f"indices must be integers, got {indices!r}") from None
    if any(not float(i).is_integer() for i in indices):
        raise BadIndexSet(f"indices must be integers, got {indices!r}")
    if not idx:
        raise BadIndexSet("index set is empty")
    if len(set(idx)) != len(idx):
        raise BadIndexSet(f"index set has duplicates: {idx}")
    bad = [i for i in idx if not 1 <= i <= d]
    if bad:
        raise BadIndexSet(f"indices {bad} outside 1..{d}")
    return idx


@dataclass(frozen=True)
class MarginalApprox:
    """Marginal skew-modal approximation over ``indices``.

    ``nu1`` and ``nu3`` (packed) are the linear and cubic coefficients before
    the scale-dependent factor is applied; ``cubic`` and ``linear`` are the
    coefficients of the polynomial actually fed to the skewing cdf.
    """

    indices: tuple
    omega_cc: np.ndarray
    nu1: np.ndarray
    nu3: np.ndarray
    skewing: SkewingFunction
    n: int
    center: np.ndarray
    parametrization: str
    anchor: np.ndarray = None
    labels: tuple = None
    joint: SkewSymmetricApprox = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = len(self.indices)
        eta, n = self.skewing.eta, self.n
        if self.parametrization == "h_scale":
            scale = 1.0 / (12.0 * eta * np.sqrt(n) * n)
            lin_scale = scale
        elif self.parametrization == "theta_scale":
            scale = 1.0 / (12.0 * eta)
            lin_scale = scale / n
        else:
            raise ValueError(f"parametrization must be one of {SCALES}")
        joint = SkewSymmetricApprox(
            self.parametrization, self.center, self.omega_cc,
            np.asarray(self.nu3) * scale, np.asarray(self.nu1) * lin_scale,
            self.skewing, n, "skew_modal", anchor=self.anchor, labels=self.labels,
        )
        object.__setattr__(self, "indices", tuple(self.indices))
        object.__setattr__(self, "omega_cc", joint.omega)
        object.__setattr__(self, "center", joint.center)
        object.__setattr__(self, "nu1", np.array(self.nu1, dtype=float).reshape(k))
        object.__setattr__(self, "nu3", np.array(self.nu3, dtype=float))
        object.__setattr__(self, "joint", joint)

    @property
    def dim(self) -> int:
        return len(self.indices)

    @property
    def location(self) -> np.ndarray:
        return self.center

    @property
    def cubic(self) -> np.ndarray:
        return self.joint.cubic

    @property
    def linear(self) -> np.ndarray:
        return self.joint.linear

    @property
    def chol(self) -> np.ndarray:
        return self.joint.chol

    @property
    def omega(self) -> np.ndarray:
        return self.joint.omega

    @property
    def provenance(self) -> str:
        return "skew_modal"

    def alpha(self, u) -> np.ndarray:
        return self.joint.alpha(u)

    def log_density(self, x) -> np.ndarray:
        return marginal_log_density(self, x)

    def to_dict(self) -> dict:
        doc = self.joint.to_dict()
        k = self.dim
        doc.update(
            format="marginal_skew_modal",
            indices=list(self.indices),
            nu1=self.nu1.tolist(),
            nu3={"indices": tensor.unique_indices(k, 3).tolist(), "values": self.nu3.tolist()},
        )
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MarginalApprox":
        if doc.get("format") != "marginal_skew_modal" or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 marginal_skew_modal document")
        k = len(doc["indices"])
        return cls(
            indices=tuple(doc["indices"]),
            omega_cc=np.array(doc["omega"], dtype=float).reshape(k, k),
            nu1=np.array(doc["nu1"], dtype=float),
            nu3=_packed_from_entries(doc["nu3"], k),
            skewing=SkewingFunction(doc["skewing"]["kind"]),
            n=int(doc["n"]),
            center=np.array(doc["center"], dtype=float),
            parametrization=doc["parametrization"],
            anchor=None if doc.get("anchor") is None else np.array(doc["anchor"], dtype=float),
            labels=doc.get("labels"),
        )


def marginal_coefficients(omega_hat: np.ndarray, third_full: np.ndarray, indices: Sequence[int]):
    """Linear and cubic marginal coefficients (``nu1``, full symmetric ``nu3``).

    ``omega_hat`` is the joint h-scale covariance and ``third_full`` the full
    third-derivative array of the log-likelihood.  ``indices`` are 1-based.
    """
    d = omega_hat.shape[0]
    c = np.array(indices) - 1
    r = np.setdiff1d(np.arange(d), c)
    t_ccc = third_full[np.ix_(c, c, c)]
    if r.size == 0:
        return np.zeros(c.size), tensor.symmetrize(t_ccc)
    o_cc = omega_hat[np.ix_(c, c)]
    o_rc = omega_hat[np.ix_(r, c)]
    o_rr = omega_hat[np.ix_(r, r)]
    try:
        fac = linalg.cho_factor(o_cc, lower=True)
    except linalg.LinAlgError:
        raise IndefiniteHessian("selected covariance block is not positive definite") from None
    lam = linalg.cho_solve(fac, o_rc.T).T  # (|r|, |c|)
    schur = o_rr - o_rc @ linalg.cho_solve(fac, o_rc.T)
    schur = 0.5 * (schur + schur.T)

    t_crr = third_full[np.ix_(c, r, r)]
    t_ccr = third_full[np.ix_(c, c, r)]
    t_rrr = third_full[np.ix_(r, r, r)]

    nu1 = 3.0 * np.einsum("srv,rv->s", t_crr, schur)
    nu1 = nu1 + 3.0 * np.einsum("rvk,rv,ks->s", t_rrr, schur, lam)
    nu3 = (
        t_ccc
        + 3.0 * np.einsum("str,rl->stl", t_ccr, lam)
        + 3.0 * np.einsum("srv,rt,vl->stl", t_crr, lam, lam)
        + np.einsum("rvk,rs,vt,kl->stl", t_rrr, lam, lam, lam)
    )
    return nu1, tensor.symmetrize(nu3)


def build_marginal_skew_modal(
    model: ModelSpec,
    data: DataSet,
    map_result: MapResult,
    indices: Sequence[int],
    skewing: SkewingFunction = PROBIT,
    scale: str = "theta_scale",
) -> MarginalApprox:
    """Marginal skew-modal approximation for the 1-based coordinate set ``indices``.

    In the theta-scale the covariance is the selected block of ``J^{-1}``
    (block of the inverse, not inverse of the block).
    """
    _require_converged(map_result)
    d = map_result.dim
    idx = normalize_indices(indices, d)
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}")
    n = data.n
    omega_hat = _spd_inverse(map_result.observed_info / n)
    third = tensor.unpack(_third_loglik(model, map_result.theta_hat, data), d, 3)
    nu1, nu3_full = marginal_coefficients(omega_hat, third, idx)
    c = np.array(idx) - 1
    if scale == "theta_scale":
        center = map_result.theta_hat[c]
        omega_cc = omega_hat[np.ix_(c, c)] / n
    else:
        center = np.zeros(len(idx))
        omega_cc = omega_hat[np.ix_(c, c)]
    labels = None
    if data.column_names is not None:
        labels = tuple(data.column_names[i] for i in c)
    return MarginalApprox(
        indices=idx,
        omega_cc=omega_cc,
        nu1=nu1,
        nu3=tensor.pack(nu3_full),
        skewing=skewing,
        n=n,
        center=center,
        parametrization=scale,
        anchor=map_result.theta_hat[c],
        labels=labels,
    )


def marginal_log_density(m: MarginalApprox, point) -> np.ndarray:
    """Log-density of the marginal approximation at one or many points."""
    return m.joint.log_density(point)
