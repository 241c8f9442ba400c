"""Accuracy diagnostics: exact conjugate posteriors, TV by quadrature,
functional errors, and the non-asymptotic TV bound calculator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from .errors import EmptyReference, PreconditionFailed, ResolutionExceeded, UnsupportedModel
from .model import DataSet, ModelSpec
from .sampler import SampleBatch, sample
from .skew import SkewSymmetricApprox, to_scale


# ---------------------------------------------------------------------------
# exact posteriors


@dataclass(frozen=True)
class ExactPosterior:
    """Gamma(shape, rate) posterior of a positive scalar parameter."""

    shape: float
    rate: float
    family: str = "gamma"

    def __post_init__(self):
        if self.family != "gamma":
            raise UnsupportedModel(f"unsupported exact family {self.family!r}")
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("shape and rate must be positive")

    @property
    def dim(self) -> int:
        return 1

    @property
    def dist(self):
        return stats.gamma(self.shape, scale=1.0 / self.rate)

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def mode(self) -> float:
        return max(0.0, (self.shape - 1.0) / self.rate)

    @property
    def sd(self) -> float:
        return np.sqrt(self.shape) / self.rate

    def log_density(self, x) -> np.ndarray:
        """Normalized log-density; accepts scalars, (m,) or (m, 1) arrays."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1) if x.ndim <= 1 or x.shape[-1] == 1 else x
        out = self.dist.logpdf(flat)
        if x.ndim == 1 and x.size == 1:
            return out[0]
        return out

    def cdf(self, x) -> np.ndarray:
        return self.dist.cdf(np.asarray(x, dtype=float))

    def expectation(self, g: Callable) -> float:
        """E[g(theta)] by adaptive quadrature over the support."""
        dist = self.dist
        lo, hi = dist.ppf(1e-15), dist.ppf(1.0 - 1e-15)
        val, _ = integrate.quad(
            lambda t: float(np.ravel(g(np.array([[t]])))[0]) * dist.pdf(t),
            lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200, points=[self.mode],
        )
        return val


def exact_posterior(model_kind, data: DataSet, prior_params: Optional[dict] = None) -> ExactPosterior:
    """Conjugate posterior for the exponential and Gamma-Poisson builtins."""
    kind = model_kind.name if isinstance(model_kind, ModelSpec) else str(model_kind)
    params = dict(prior_params or {})
    if isinstance(model_kind, ModelSpec):
        params = {**model_kind.params, **params}
    if data is None or data.n < 1:
        raise UnsupportedModel("an exact posterior needs at least one observation")
    sx = float(np.sum(data.responses))
    if kind == "exponential_expprior":
        return ExactPosterior(data.n + 1.0, params.get("rate_prior", 1.0) + sx)
    if kind == "gamma_poisson":
        return ExactPosterior(params.get("alpha", 2.0) + sx, params.get("beta", 1.0) + data.n)
    raise UnsupportedModel(f"no conjugate exact posterior for model {kind!r}")


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class TVResult:
    tv: float
    slack: float
    mass_p: float
    mass_q: float
    nodes: int


def _simpson_weights(lo: float, hi: float, intervals: int):
    x = np.linspace(lo, hi, intervals + 1)
    w = np.ones(intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (hi - lo) / intervals / 3.0


def _grid(box, counts):
    axes, weights = zip(*(_simpson_weights(lo, hi, c) for (lo, hi), c in zip(box, counts)))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    w = weights[0]
    for wk in weights[1:]:
        w = np.multiply.outer(w, wk)
    return pts, np.ravel(w)


def _check_box(box):
    box = [tuple(float(v) for v in b) for b in box]
    if not 1 <= len(box) <= 3:
        raise ValueError("quadrature supports dimensions 1 to 3")
    if any(not hi > lo for lo, hi in box):
        raise ValueError("each box interval needs hi > lo")
    return box


def _refine(evaluate, box, resolution, tol, rtol, max_points):
    box = _check_box(box)
    d = len(box)
    base = [16] * d if resolution is None else [int(r) + (int(r) % 2) for r in np.broadcast_to(resolution, (d,))]
    prev = None
    level = 0
    while True:
        counts = [c * 2 ** level for c in base]
        npts = int(np.prod([c + 1 for c in counts]))
        if npts > max_points:
            raise ResolutionExceeded(
                f"quadrature did not reach tolerance {tol:g} within {max_points} nodes"
            )
        pts, w = _grid(box, counts)
        cur = evaluate(pts, w)
        if prev is not None and abs(cur[0] - prev[0]) < max(tol, rtol * abs(cur[0])):
            return cur, npts
        prev = cur
        level += 1


def integrate_density(log_f: Callable, box, resolution=None, tol: float = 1e-8, max_points: int = 2 ** 22) -> float:
    """Integral of ``exp(log_f)`` over the box by refined tensor Simpson."""

    def evaluate(pts, w):
        return (float(w @ np.exp(log_f(pts))),)

    return _refine(evaluate, box, resolution, tol, 0.0, max_points)[0][0]


def tv_quadrature(
    log_p: Callable,
    log_q: Callable,
    box: Sequence,
    resolution=None,
    tol: float = 1e-6,
    rtol: float = 0.0,
    max_points: int = 2 ** 22,
    return_details: bool = False,
):
    """Half the L1 distance between two normalized densities on a box (d <= 3).

    Tensor-product composite Simpson; the grid is doubled until two
    successive estimates differ by less than ``max(tol, rtol * tv)``.  The
    probability mass each density places outside the box is reported as
    ``slack`` in the detailed result.  Log-densities take an (m, d) array.
    """

    def evaluate(pts, w):
        p = np.exp(log_p(pts))
        q = np.exp(log_q(pts))
        return 0.5 * float(w @ np.abs(p - q)), float(w @ p), float(w @ q)

    (tv, mp, mq), npts = _refine(evaluate, box, resolution, tol, rtol, max_points)
    tv = min(max(tv, 0.0), 1.0)
    if not return_details:
        return tv
    slack = 0.5 * (max(0.0, 1.0 - mp) + max(0.0, 1.0 - mq))
    return TVResult(tv, slack, mp, mq, npts)


def _extent(obj):
    if isinstance(obj, ExactPosterior):
        return np.array([obj.mean]), np.array([obj.sd])
    return np.asarray(obj.location, dtype=float), np.sqrt(np.diag(obj.omega))


def default_box(*densities, width: float = 10.0, mass_tol: float = 1e-8):
    """Union of ``location +- width * sd`` boxes, widened until each density
    has at least ``1 - mass_tol`` of its mass inside."""
    los, his = [], []
    for obj in densities:
        loc, sd = _extent(obj)
        los.append(loc - width * sd)
        his.append(loc + width * sd)
    lo, hi = np.min(los, axis=0), np.max(his, axis=0)
    for _ in range(8):
        box = list(zip(lo, hi))
        masses = [integrate_density(o.log_density, box) for o in densities]
        if min(masses) >= 1.0 - mass_tol:
            break
        mid, half = 0.5 * (lo + hi), 0.75 * (hi - lo)
        lo, hi = mid - half, mid + half
    return list(zip(lo.tolist(), hi.tolist()))


def tv_distance(a, b, tol: float = 1e-6, rtol: float = 0.0, box=None, return_details: bool = False):
    """TV between two densities with a ``log_density`` method (joint
    approximations are moved to the theta-scale first)."""
    a, b = _theta(a), _theta(b)
    box = default_box(a, b) if box is None else box
    return tv_quadrature(a.log_density, b.log_density, box, tol=tol, rtol=rtol, return_details=return_details)


def _theta(obj):
    if isinstance(obj, SkewSymmetricApprox) and obj.parametrization == "h_scale":
        return to_scale(obj, "theta_scale")
    return obj


def quadrature_mean(density, box=None, tol: float = 1e-12) -> np.ndarray:
    """Mean vector of a density (d <= 3) by the same Simpson engine."""
    if isinstance(density, ExactPosterior):
        return np.array([density.mean])
    box = default_box(density) if box is None else box
    d = len(box)
    out = np.empty(d)
    for k in range(d):
        def evaluate(pts, w, k=k):
            return (float(w @ (pts[:, k] * np.exp(density.log_density(pts)))),)

        out[k] = _refine(evaluate, box, None, tol, 1e-10, 2 ** 22)[0][0]
    return out


# ---------------------------------------------------------------------------
# functional errors


@dataclass(frozen=True)
class DiagnosticsReport:
    tv: Optional[float]
    fmae: Optional[np.ndarray]
    method: str
    standard_error: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tv is not None and not 0.0 <= self.tv <= 1.0:
            raise ValueError("tv must lie in [0, 1]")
        if self.method not in ("quadrature", "monte_carlo"):
            raise ValueError("method must be quadrature or monte_carlo")
        if self.method == "quadrature" and self.standard_error is not None:
            raise ValueError("quadrature reports carry no standard error")

    def to_dict(self) -> dict:
        return {
            "tv": self.tv,
            "fmae": None if self.fmae is None else np.atleast_1d(self.fmae).tolist(),
            "method": self.method,
            "standard_error": None if self.standard_error is None else np.atleast_1d(self.standard_error).tolist(),
            "metadata": self.metadata,
        }


def _identity(x):
    return x


def _mean_se(values: np.ndarray):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    m = values.shape[0]
    se = values.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.full(values.shape[1], np.inf)
    return values.mean(axis=0), se


def functional_error(approx, reference, G: Optional[Callable] = None, m: int = 100_000, seed: int = 0) -> DiagnosticsReport:
    """``|E_ref G - E_approx G|`` with ``E_approx`` from ``m`` seeded draws.

    ``reference`` is a :class:`SampleBatch`, an (r, k) array of reference
    draws, or an :class:`ExactPosterior` (whose expectation is computed by
    quadrature and contributes no Monte Carlo error).  ``G`` maps an (m, k)
    array to (m,) or (m, p) values.
    """
    G = _identity if G is None else G
    draws = sample(approx, m, seed).points
    e_app, se_app = _mean_se(G(draws))
    if isinstance(reference, ExactPosterior):
        probe = np.ravel(G(np.array([[reference.mean]])))
        e_ref = np.array([reference.expectation(lambda t, j=j: np.ravel(G(t))[j]) for j in range(probe.size)])
        se_ref = np.zeros_like(e_ref)
        source = "exact"
    else:
        pts = reference.points if isinstance(reference, SampleBatch) else np.asarray(reference, dtype=float)
        if pts.size == 0:
            raise EmptyReference("reference sample is empty")
        if pts.ndim == 1:
            pts = pts[:, None]
        e_ref, se_ref = _mean_se(G(pts))
        source = "samples"
    err = np.abs(e_ref - e_app)
    se = np.sqrt(se_app ** 2 + se_ref ** 2)
    return DiagnosticsReport(
        tv=None,
        fmae=err,
        method="monte_carlo",
        standard_error=se,
        metadata={"m": int(m), "seed": int(seed), "reference": source, "provenance": approx.provenance, "n": int(approx.n)},
    )


def average_probability_error(reference_draws, approx_draws, covariates, link: str = "probit") -> float:
    """Mean over rows i of ``|E_ref g(z_i'theta) - E_approx g(z_i'theta)|``.

    ``g`` is the standard normal cdf for ``link='probit'`` and the inverse
    logit for ``link='logit'``.
    """
    g = special.ndtr if link == "probit" else special.expit
    ref = np.atleast_2d(np.asarray(reference_draws, dtype=float))
    app = np.atleast_2d(np.asarray(approx_draws, dtype=float))
    if ref.size == 0 or app.size == 0:
        raise EmptyReference("both sample sets must be nonempty")
    z = np.asarray(covariates, dtype=float)
    pr = g(ref @ z.T).mean(axis=0)
    pr_hat = g(app @ z.T).mean(axis=0)
    return float(np.mean(np.abs(pr - pr_hat)))


# ---------------------------------------------------------------------------
# non-asymptotic bound


@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the finite-sample TV bound for the skew-modal approximation.

    ``L3``, ``L4``, ``L_pi2`` bound the third and fourth log-likelihood
    derivatives and the prior Hessian; ``L_F_delta`` bounds the quadratic
    remainder of the skewing cdf near zero; ``eta_bar1 <= eta_bar2`` bound
    the eigenvalues of the precision.  ``delta``, ``L_pi_delta`` and
    ``C_pi_delta`` are optional; without them the conditions that use them
    are reported as not evaluated.
    """

    L3: float
    L4: float
    L_pi2: float
    L_F_delta: float
    eta_bar1: float
    eta_bar2: float
    c0: float
    c5: float
    d: int
    n: int
    delta: Optional[float] = None
    L_pi_delta: Optional[float] = None
    C_pi_delta: Optional[float] = None

    def __post_init__(self):
        for name in ("L3", "L4", "L_pi2", "L_F_delta", "eta_bar1", "eta_bar2", "c0", "c5"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eta_bar1 > self.eta_bar2:
            raise ValueError("eta_bar1 must not exceed eta_bar2")
        if self.d < 1 or self.n < 2:
            raise ValueError("need d >= 1 and n >= 2")
        for name in ("delta", "C_pi_delta"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def M_n(self) -> float:
        return float(np.sqrt(self.c0 * np.log(float(self.n))))


@dataclass(frozen=True)
class BoundResult:
    bound: float
    c1_star: float
    c2_star: float
    remainder: float
    M_n: float
    preconditions: dict
    valid: bool

    def to_dict(self) -> dict:
        return {
            "bound": self.bound,
            "c1_star": self.c1_star,
            "c2_star": self.c2_star,
            "remainder": self.remainder,
            "M_n": self.M_n,
            "preconditions": self.preconditions,
            "valid": self.valid,
        }


def c1_star(b: BoundInputs) -> float:
    return 4.0 * b.L3 / 3.0 + 2.0 * b.L4 / 3.0 + 2.0 * b.L_pi2


def c2_star(b: BoundInputs) -> float:
    lf, l3 = b.L_F_delta, b.L3
    return (
        16.0 * (2.0 + lf) * l3 ** 2 / 9.0
        + 2.0 * 256.0 * lf ** 2 * l3 ** 4 / 81.0
        + 2.0 * b.L4 / 3.0
        + 2.0 * b.L_pi2
    )


def nonasymptotic_bound(b: BoundInputs, strict: bool = False) -> BoundResult:
    """TV bound ``(M_n^6 d^3 / n) * r(n, d)`` with its preconditions.

    The result always carries the bound value; ``valid`` is false when a
    checked precondition fails.  With ``strict=True`` a failure raises
    :class:`PreconditionFailed` (the exception carries the result).
    """
    c1, c2 = c1_star(b), c2_star(b)
    n, d, mn = float(b.n), b.d, b.M_n
    lead = mn ** 6 * d ** 3 / n
    remainder = (
        2.0 * c2
        + 2.0 * c2 ** 2 * np.e * lead
        + 4.0 * n ** (1.0 - b.eta_bar1 * b.c0)
        + 2.0 * n ** (1.0 - (b.c0 * b.c5 / 2.0) * d)
    )
    lhs = mn ** 3 * d ** 1.5 / np.sqrt(n)
    inner = min(1.0 / (2.0 * np.sqrt(b.L_F_delta)), 0.25)
    limits = {"one": 1.0, "third_derivative": 3.0 / (4.0 * b.L3) * inner, "c2_star": 1.0 / (2.0 * c2)}
    if b.delta is not None:
        limits["delta_half"] = b.delta / 2.0
        limits["third_derivative"] = 3.0 / (4.0 * b.L3) * min(b.delta, inner)
    pre = {
        "sample_size_lhs": float(lhs),
        "sample_size_rhs": float(min(limits.values())),
        "sample_size": bool(lhs <= min(limits.values())),
        "sample_size_terms": {k: bool(lhs <= v) for k, v in limits.items()},
        "delta_evaluated": b.delta is not None,
    }
    floor = 2.0 / b.eta_bar1
    if b.L_pi_delta is not None and b.C_pi_delta is not None:
        floor = max(
            floor,
            2.0 * (c1 / d + b.L_pi_delta / d + 0.5 * np.log(b.eta_bar2 / (2.0 * np.pi)) - np.log(b.C_pi_delta / 2.0) / d) / b.c5,
        )
        pre["c0_evaluated"] = True
    else:
        pre["c0_evaluated"] = False
    pre["c0_floor"] = float(floor)
    pre["c0"] = bool(b.c0 >= floor)
    valid = pre["sample_size"] and pre["c0"]
    result = BoundResult(float(lead * remainder), c1, c2, float(remainder), mn, pre, bool(valid))
    if strict and not valid:
        failed = [k for k, v in pre["sample_size_terms"].items() if not v]
        if not pre["c0"]:
            failed.append("c0")
        raise PreconditionFailed(f"bound preconditions failed: {failed}", result=result)
    return result
