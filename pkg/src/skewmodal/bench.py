"""Replicated simulation studies comparing approximations against exact posteriors.

Each replicate draws one data stream from the generating process with its
own seed and evaluates every approximation on nested prefixes of it.  Metrics
are ``tv`` (TV distance to the conjugate posterior) and ``fmae`` (absolute
posterior-mean error on the ``sqrt(n)``-rescaled scale).  Replicate results
are summarized by the mean of log metrics.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from . import jsonio
from .diagnostics import exact_posterior, quadrature_mean, tv_quadrature
from .errors import MetricMissing, SkewModalError
from .map_estimate import find_map
from .model import DataSet, build_model
from .sampler import generator, replicate_seed
from .skew import (
    SkewingFunction,
    build_gaussian_laplace,
    build_skew_modal,
    build_theoretical_sks,
    to_scale,
)

APPROXIMATIONS = ("gaussian", "skew_modal", "theoretical_sks")
METRICS = ("tv", "fmae")
PROCESSES = {"exponential": ("rate",), "lognormal": ("mu", "sigma"), "poisson": ("mean",)}


@dataclass(frozen=True)
class EqualAccuracy:
    """Dense baseline curve settings for the equal-accuracy table."""

    targets: tuple = (10, 15, 20, 25, 50)
    step: int = 5
    cap: int = 2500
    baseline: str = "gaussian"


@dataclass(frozen=True)
class StudyConfig:
    model: str
    process: dict
    grid: tuple
    replicates: int = 50
    seed: int = 0
    approximations: tuple = ("gaussian", "skew_modal")
    metrics: tuple = ("tv", "fmae")
    prior_params: dict = field(default_factory=dict)
    skewing: str = "probit_cdf"
    equal_accuracy: Optional[EqualAccuracy] = None
    tv_rtol: float = 1e-4

    def __post_init__(self):
        grid = tuple(int(g) for g in self.grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            raise ValueError("grid must be a strictly increasing list of positive sizes")
        object.__setattr__(self, "grid", grid)
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        kind = self.process.get("kind")
        if kind not in PROCESSES:
            raise ValueError(f"process kind must be one of {sorted(PROCESSES)}")
        missing = [p for p in PROCESSES[kind] if p not in self.process]
        if missing:
            raise ValueError(f"process {kind!r} needs parameters {missing}")
        bad = set(self.approximations) - set(APPROXIMATIONS)
        if bad or not self.approximations:
            raise ValueError(f"approximations must be a nonempty subset of {APPROXIMATIONS}")
        bad = set(self.metrics) - set(METRICS)
        if bad or not self.metrics:
            raise ValueError(f"metrics must be a nonempty subset of {METRICS}")
        if self.model not in ("exponential_expprior", "gamma_poisson"):
            raise ValueError("studies need a conjugate model: exponential_expprior or gamma_poisson")
        object.__setattr__(self, "approximations", tuple(self.approximations))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        ea = self.equal_accuracy
        if isinstance(ea, dict):
            ea = EqualAccuracy(**{**ea, "targets": tuple(ea.get("targets", EqualAccuracy.targets))})
            object.__setattr__(self, "equal_accuracy", ea)
        if ea is not None and ea.baseline not in APPROXIMATIONS:
            raise ValueError(f"baseline must be one of {APPROXIMATIONS}")

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        doc = dict(doc)
        for key in ("grid", "approximations", "metrics"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.equal_accuracy is not None:
            out["equal_accuracy"] = asdict(self.equal_accuracy)
        return out

    @property
    def n_draws(self) -> int:
        n = self.grid[-1]
        if self.equal_accuracy is not None:
            n = max(n, self.equal_accuracy.cap, max(self.equal_accuracy.targets))
        return n


def _frozen_dist(process: dict):
    kind = process["kind"]
    if kind == "exponential":
        return stats.expon(scale=1.0 / process["rate"])
    if kind == "lognormal":
        return stats.lognorm(s=process["sigma"], scale=np.exp(process["mu"]))
    return stats.poisson(process["mean"])


def draw_data(process: dict, size: int, seed: int) -> np.ndarray:
    """``size`` observations from the generating process with a seeded PCG64 stream."""
    gen = generator(seed)
    kind = process["kind"]
    if kind == "exponential":
        return gen.exponential(1.0 / process["rate"], size)
    if kind == "lognormal":
        return gen.lognormal(process["mu"], process["sigma"], size)
    return gen.poisson(process["mean"], size).astype(float)


def kl_projection(model_kind: str, process: dict, prior_params: Optional[dict] = None) -> float:
    """Parameter of the model family closest in KL to the generating process.

    Maximizes the expected per-observation log-likelihood over log(theta),
    with the expectation computed by quadrature under the process law.
    """
    model = build_model(model_kind, **(prior_params or {}))
    dist = _frozen_dist(process)

    # both builtin scalar models are linear in (log theta, theta) given the data
    if model_kind == "exponential_expprior":
        first = dist.expect(lambda x: x)

        def neg(lt):
            t = np.exp(lt)
            return -(np.log(t) - t * first)
    else:
        first = dist.expect(lambda x: x)

        def neg(lt):
            t = np.exp(lt)
            return -(first * np.log(t) - t)

    res = optimize.minimize_scalar(neg, bounds=(-20.0, 20.0), method="bounded", options={"xatol": 1e-12})
    theta = float(np.exp(res.x))
    model.check([theta])
    return theta


def _metric_values(approx, exact, metrics, n, rtol):
    out = {}
    theta = to_scale(approx, "theta_scale")
    if "tv" in metrics:
        sd = max(float(np.sqrt(theta.omega[0, 0])), exact.sd)
        lo = min(theta.location[0], exact.mean) - 12.0 * sd
        hi = max(theta.location[0], exact.mean) + 12.0 * sd
        out["tv"] = tv_quadrature(exact.log_density, theta.log_density, [(lo, hi)], tol=1e-14, rtol=rtol)
    if "fmae" in metrics:
        mean = quadrature_mean(theta)[0]
        out["fmae"] = float(np.sqrt(n) * abs(exact.mean - mean))
    return out


def _cells(cfg: StudyConfig):
    """(n, approximations) pairs evaluated in each replicate."""
    main = set(cfg.grid)
    ea = cfg.equal_accuracy
    if ea is not None:
        main |= set(ea.targets)
        dense = set(range(ea.step, ea.cap + 1, ea.step))
    else:
        dense = set()
    out = []
    for n in sorted(main | dense):
        names = [a for a in cfg.approximations if n in main]
        if ea is not None and n in dense and ea.baseline not in names:
            names.append(ea.baseline)
        out.append((n, [a for a in APPROXIMATIONS if a in names]))
    return out


def run_replicate(cfg: StudyConfig, replicate: int, theta_star: Optional[float] = None) -> list:
    """All (n, replicate, approx, metric, value) records for one replicate."""
    model = build_model(cfg.model, **cfg.prior_params)
    skewing = SkewingFunction(cfg.skewing)
    stream = draw_data(cfg.process, cfg.n_draws, replicate_seed(cfg.seed, replicate))
    records = []
    for n, names in _cells(cfg):
        data = DataSet(stream[:n])
        exact = exact_posterior(model, data)
        try:
            fit = find_map(model, data)
            fit_ok = fit.converged
        except SkewModalError:
            fit_ok = False
        for name in names:
            try:
                if not fit_ok:
                    raise SkewModalError("MAP search failed")
                if name == "gaussian":
                    approx = build_gaussian_laplace(fit)
                elif name == "skew_modal":
                    approx = build_skew_modal(model, data, fit, skewing)
                else:
                    approx = build_theoretical_sks(model, data, [theta_star], skewing)
                values = _metric_values(approx, exact, cfg.metrics, n, cfg.tv_rtol)
            except SkewModalError:
                values = {m: float("nan") for m in cfg.metrics}
            for metric in cfg.metrics:
                records.append((n, replicate, name, metric, float(values[metric])))
    return records


def _run_args(args):
    return run_replicate(*args)


@dataclass(frozen=True)
class StudyReport:
    """Raw records plus replicate summaries.

    ``mean_log[approx][metric][n]`` is the replicate mean of log metric
    values (missing cells are skipped and counted in ``missing``);
    ``slopes`` are least-squares slopes of those means against ``log n``
    over the configured grid.
    """

    config: StudyConfig
    records: tuple
    mean_log: dict
    slopes: dict
    equal_accuracy: dict
    theta_star: Optional[float]
    missing: int

    def to_dict(self) -> dict:
        def keyed(table):
            return {a: {m: {str(n): v for n, v in sorted(c.items())} for m, c in t.items()} for a, t in table.items()}

        return {
            "config": self.config.to_dict(),
            "theta_star": self.theta_star,
            "mean_log": keyed(self.mean_log),
            "slopes": self.slopes,
            "equal_accuracy": {
                a: {m: {str(n): v for n, v in sorted(c.items())} for m, c in t.items()}
                for a, t in self.equal_accuracy.items()
            },
            "missing_cells": self.missing,
            "n_records": len(self.records),
        }

    def write_json(self, path) -> None:
        jsonio.dump(self.to_dict(), path)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "replicate", "approx", "metric", "value"])
            for n, r, a, m, v in self.records:
                w.writerow([n, r, a, m, "nan" if np.isnan(v) else format(v, ".17g")])

    def values(self, approx: str, metric: str, n: int) -> np.ndarray:
        """Per-replicate values for one cell, in replicate order."""
        rows = [(r, v) for nn, r, a, m, v in self.records if nn == n and a == approx and m == metric]
        if not rows:
            raise MetricMissing(f"no records for {approx}/{metric} at n={n}")
        return np.array([v for _, v in sorted(rows)])


def _summarize(records, cfg: StudyConfig):
    grouped: dict = {}
    for n, r, a, m, v in records:
        grouped.setdefault(a, {}).setdefault(m, {}).setdefault(n, []).append((r, v))
    mean_log, missing = {}, 0
    for a, per_metric in grouped.items():
        mean_log[a] = {}
        for m, per_n in per_metric.items():
            mean_log[a][m] = {}
            for n, rows in per_n.items():
                vals = np.array([v for _, v in sorted(rows)])
                ok = np.isfinite(vals) & (vals > 0)
                missing += int(np.sum(~np.isfinite(vals)))
                mean_log[a][m][n] = float(np.mean(np.log(vals[ok]))) if ok.any() else float("nan")
    slopes = {}
    logn = np.log(np.array(cfg.grid, dtype=float))
    for a in cfg.approximations:
        slopes[a] = {}
        for m in cfg.metrics:
            y = np.array([mean_log[a][m].get(n, np.nan) for n in cfg.grid])
            ok = np.isfinite(y)
            slopes[a][m] = float(np.polyfit(logn[ok], y[ok], 1)[0]) if ok.sum() >= 2 else float("nan")
    return mean_log, slopes, missing


def run_study(cfg: StudyConfig, jobs: int = 1) -> StudyReport:
    """Run every replicate (optionally in ``jobs`` worker processes) and summarize.

    Results are identical for any ``jobs`` value: each replicate owns its
    seed and records are assembled in replicate order.
    """
    theta_star = None
    if "theoretical_sks" in cfg.approximations or cfg.process["kind"] == "lognormal":
        theta_star = kl_projection(cfg.model, cfg.process, cfg.prior_params)
    args = [(cfg, r, theta_star) for r in range(cfg.replicates)]
    if jobs > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_args, args))
    else:
        chunks = [_run_args(a) for a in args]
    records = tuple(rec for chunk in chunks for rec in chunk)
    mean_log, slopes, missing = _summarize(records, cfg)
    report = StudyReport(cfg, records, mean_log, slopes, {}, theta_star, missing)
    table = {}
    ea = cfg.equal_accuracy
    if ea is not None:
        for a in cfg.approximations:
            if a == ea.baseline:
                continue
            table[a] = {m: {n: equal_accuracy_n(report, m, n, a) for n in ea.targets} for m in cfg.metrics}
    return StudyReport(cfg, records, mean_log, slopes, table, theta_star, missing)


def equal_accuracy_n(report: StudyReport, metric: str, n: int, approx: str = "skew_modal"):
    """Smallest dense-grid size at which the baseline's mean log metric is no
    larger than ``approx``'s at ``n``; ``"unbounded(cap)"`` when never reached."""
    ea = report.config.equal_accuracy
    if ea is None:
        raise MetricMissing("the study was run without an equal-accuracy section")
    try:
        target = report.mean_log[approx][metric][n]
        curve = report.mean_log[ea.baseline][metric]
    except KeyError:
        raise MetricMissing(f"no {metric!r} values for {approx!r} at n={n} and baseline {ea.baseline!r}") from None
    if not np.isfinite(target):
        raise MetricMissing(f"{approx!r} {metric!r} at n={n} has no finite values")
    for nbar in range(ea.step, ea.cap + 1, ea.step):
        v = curve.get(nbar, np.nan)
        if np.isfinite(v) and v <= target:
            return nbar
    return f"unbounded({ea.cap})"
