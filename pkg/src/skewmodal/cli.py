"""Command-line interface.

Every command reads a JSON config (``--config``), prints JSON lines to
standard output and writes its artifacts only to the configured output paths.
Exit codes: 0 success, 1 numerical or domain failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np
from scipy import stats

from . import jsonio
from .bench import StudyConfig, run_study
from .diagnostics import (
    BoundInputs,
    average_probability_error,
    exact_posterior,
    functional_error,
    integrate_density,
    nonasymptotic_bound,
    tv_distance,
    default_box,
)
from .errors import BadIndexSet, DataError, EmptyReference, MetricMissing, SkewModalError, UnsupportedModel
from .map_estimate import find_map
from .marginal import MarginalApprox, build_marginal_skew_modal
from .model import DataSet, build_model, load_csv
from .sampler import read_csv, sample, write_csv
from .skew import (
    SkewingFunction,
    SkewSymmetricApprox,
    build_gaussian_laplace,
    build_skew_modal,
    build_theoretical_sks,
)

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# schemas

_NUM_LIST = {"type": "array", "items": {"type": "number"}}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["exponential_expprior", "gamma_poisson", "probit_gaussian", "logit_gaussian"]},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}

DATA_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "path": {"type": "string"},
        "response": {"type": "string"},
        "intercept": {"type": "boolean"},
        "covariates": {"type": "array", "items": {"type": "string"}},
        "responses": _NUM_LIST,
        "covariate_matrix": {"type": "array", "items": _NUM_LIST},
    },
    "oneOf": [{"required": ["path", "response"]}, {"required": ["responses"]}],
}

MAP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "init": _NUM_LIST,
    },
}

_FIT_PROPS = {
    "model": MODEL_SCHEMA,
    "data": DATA_SCHEMA,
    "map": MAP_SCHEMA,
    "skewing": {"enum": ["probit_cdf", "inverse_logit"]},
    "scale": {"enum": ["theta_scale", "h_scale"]},
}

APPROX_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "data"],
    "properties": {
        **_FIT_PROPS,
        "approximation": {"enum": ["skew_modal", "gaussian", "theoretical_sks"]},
        "theta_star": _NUM_LIST,
        "output": {"type": "string"},
    },
}

MARGINAL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "data", "indices"],
    "properties": {
        **_FIT_PROPS,
        "indices": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "output": {"type": "string"},
    },
}

SAMPLE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **_FIT_PROPS,
        "approximation_file": {"type": "string"},
        "approximation": {"enum": ["skew_modal", "gaussian", "theoretical_sks"]},
        "theta_star": _NUM_LIST,
        "indices": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "n_draws": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "ks_check": {"type": "boolean"},
        "output": {"type": "string"},
    },
    "anyOf": [{"required": ["approximation_file"]}, {"required": ["model", "data"]}],
}

BOUND_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["L3", "L4", "L_pi2", "L_F_delta", "eta_bar1", "eta_bar2", "c0", "c5", "d", "n"],
    "properties": {
        **{k: {"type": "number"} for k in ("L3", "L4", "L_pi2", "L_F_delta", "eta_bar1", "eta_bar2", "c0", "c5", "delta", "L_pi_delta", "C_pi_delta")},
        "d": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 2},
    },
}

DIAGNOSE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        **_FIT_PROPS,
        "task": {"enum": ["tv", "functional", "exact", "bound", "ave_pr"]},
        "approximations": {
            "type": "array",
            "items": {"enum": ["skew_modal", "gaussian", "theoretical_sks"]},
            "minItems": 1,
        },
        "reference": {"type": "string"},
        "approximation_file": {"type": "string"},
        "theta_star": _NUM_LIST,
        "m": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "link": {"enum": ["probit", "logit"]},
        "bound": BOUND_SCHEMA,
        "strict": {"type": "boolean"},
        "output": {"type": "string"},
    },
}

BENCH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "process", "grid"],
    "properties": {
        "model": {"enum": ["exponential_expprior", "gamma_poisson"]},
        "process": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["exponential", "lognormal", "poisson"]},
                "rate": {"type": "number"},
                "mu": {"type": "number"},
                "sigma": {"type": "number"},
                "mean": {"type": "number"},
            },
        },
        "grid": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "replicates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "approximations": {"type": "array", "items": {"enum": ["gaussian", "skew_modal", "theoretical_sks"]}},
        "metrics": {"type": "array", "items": {"enum": ["tv", "fmae"]}},
        "prior_params": {"type": "object", "additionalProperties": {"type": "number"}},
        "skewing": {"enum": ["probit_cdf", "inverse_logit"]},
        "tv_rtol": {"type": "number", "exclusiveMinimum": 0},
        "equal_accuracy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "targets": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "step": {"type": "integer", "minimum": 1},
                "cap": {"type": "integer", "minimum": 1},
                "baseline": {"enum": ["gaussian", "skew_modal", "theoretical_sks"]},
            },
        },
        "output": {"type": "string"},
        "csv_output": {"type": "string"},
    },
}


# ---------------------------------------------------------------------------
# helpers


def _emit(obj) -> None:
    sys.stdout.write(jsonio.dumps(obj, indent=None) + "\n")


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(jsonio.dumps({"error": kind, "message": message}, indent=None) + "\n")
    return code


def _load_config(path, schema) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return doc


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _load_data(cfg: dict, base: Path) -> DataSet:
    spec = cfg["data"]
    if "responses" in spec:
        z = spec.get("covariate_matrix")
        return DataSet(np.array(spec["responses"], dtype=float), None if z is None else np.array(z, dtype=float))
    path = _resolve(base, spec["path"])
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    return load_csv(path, spec["response"], spec.get("intercept", False), spec.get("covariates"))


def _fit(cfg: dict, base: Path):
    mcfg = cfg["model"]
    try:
        model = build_model(mcfg["kind"], **mcfg.get("params", {}))
    except TypeError as exc:
        raise ConfigError(f"bad model params: {exc}") from None
    data = _load_data(cfg, base)
    opts = cfg.get("map", {})
    fit = find_map(model, data, init=opts.get("init"), tol=opts.get("tol", 1e-8), max_iter=opts.get("max_iter", 100), strict=True)
    _emit({
        "event": "map",
        "theta_hat": fit.theta_hat.tolist(),
        "log_det_info": fit.log_det_info,
        "grad_norm": fit.grad_norm,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "n": fit.n,
    })
    return model, data, fit


def _build(kind: str, cfg: dict, model, data, fit):
    skewing = SkewingFunction(cfg.get("skewing", "probit_cdf"))
    scale = cfg.get("scale", "theta_scale")
    if kind == "gaussian":
        return build_gaussian_laplace(fit, scale, skewing)
    if kind == "skew_modal":
        return build_skew_modal(model, data, fit, skewing, scale)
    if "theta_star" not in cfg:
        raise ConfigError("theoretical_sks needs theta_star")
    return build_theoretical_sks(model, data, cfg["theta_star"], skewing)


def _out_path(args, cfg: dict, base: Path, key: str = "output"):
    if args.out:
        return Path(args.out)
    if key in cfg:
        return _resolve(base, cfg[key])
    return None


def _load_approx(path: Path):
    doc = jsonio.load(path)
    if doc.get("format") == "marginal_skew_modal":
        return MarginalApprox.from_dict(doc)
    return SkewSymmetricApprox.from_dict(doc)


# ---------------------------------------------------------------------------
# commands


def cmd_approx(args) -> int:
    cfg = _load_config(args.config, APPROX_SCHEMA)
    base = Path(args.config).parent
    model, data, fit = _fit(cfg, base)
    approx = _build(cfg.get("approximation", "skew_modal"), cfg, model, data, fit)
    doc = approx.to_dict()
    out = _out_path(args, cfg, base)
    if out is not None:
        jsonio.dump(doc, out)
        _emit({"event": "written", "path": str(out)})
    else:
        _emit({"event": "approximation", "approximation": doc})
    return EXIT_OK


def cmd_marginal(args) -> int:
    cfg = _load_config(args.config, MARGINAL_SCHEMA)
    base = Path(args.config).parent
    model, data, fit = _fit(cfg, base)
    m = build_marginal_skew_modal(
        model, data, fit, cfg["indices"], SkewingFunction(cfg.get("skewing", "probit_cdf")), cfg.get("scale", "theta_scale")
    )
    out = _out_path(args, cfg, base)
    if out is not None:
        jsonio.dump(m.to_dict(), out)
        _emit({"event": "written", "path": str(out)})
    else:
        _emit({"event": "marginal", "approximation": m.to_dict()})
    return EXIT_OK


def _ks_check(approx, points) -> dict:
    box = default_box(approx)
    (lo, hi), = box
    grid = np.linspace(lo, hi, 20001)
    dens = np.exp(approx.log_density(grid[:, None]))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    res = stats.kstest(points[:, 0], lambda x: np.interp(x, grid, cdf))
    return {"statistic": float(res.statistic), "pvalue": float(res.pvalue), "passed": bool(res.pvalue >= 0.01)}


def cmd_sample(args) -> int:
    cfg = _load_config(args.config, SAMPLE_SCHEMA)
    base = Path(args.config).parent
    if "approximation_file" in cfg:
        approx = _load_approx(_resolve(base, cfg["approximation_file"]))
    else:
        model, data, fit = _fit(cfg, base)
        if "indices" in cfg:
            approx = build_marginal_skew_modal(
                model, data, fit, cfg["indices"], SkewingFunction(cfg.get("skewing", "probit_cdf")), cfg.get("scale", "theta_scale")
            )
        else:
            approx = _build(cfg.get("approximation", "skew_modal"), cfg, model, data, fit)
    m = args.n_draws if args.n_draws is not None else cfg.get("n_draws", 1000)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    batch = sample(approx, m, seed)
    out = _out_path(args, cfg, base)
    if out is None:
        raise ConfigError("sample needs an output path (--out or config 'output')")
    write_csv(batch, out)
    _emit({
        "event": "samples",
        "path": str(out),
        "m": batch.m,
        "seed": batch.seed,
        "provenance": batch.approx_id,
        "mean": batch.points.mean(axis=0).tolist(),
    })
    if args.ks_check or cfg.get("ks_check", False):
        if approx.dim != 1:
            raise ConfigError("the KS check needs a one-dimensional approximation")
        res = _ks_check(approx, batch.points)
        _emit({"event": "ks_check", **res})
        return EXIT_OK if res["passed"] else EXIT_NUMERIC
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _load_config(args.config, DIAGNOSE_SCHEMA)
    base = Path(args.config).parent
    task = cfg["task"]
    if task == "bound":
        if "bound" not in cfg:
            raise ConfigError("task 'bound' needs a 'bound' object")
        try:
            inputs = BoundInputs(**cfg["bound"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        res = nonasymptotic_bound(inputs)
        report = {"task": "bound", **res.to_dict()}
        code = EXIT_NUMERIC if cfg.get("strict", False) and not res.valid else EXIT_OK
    else:
        if "model" not in cfg or "data" not in cfg:
            raise ConfigError(f"task {task!r} needs model and data")
        model, data, fit = _fit(cfg, base)
        names = cfg.get("approximations", ["gaussian", "skew_modal"])
        code = EXIT_OK
        if task == "exact":
            ex = exact_posterior(model, data)
            report = {"task": "exact", "family": ex.family, "shape": ex.shape, "rate": ex.rate, "mean": ex.mean, "mode": ex.mode}
        elif task == "tv":
            reference = cfg.get("reference", "exact")
            if reference == "exact":
                ref = exact_posterior(model, data)
            else:
                ref = _load_approx(_resolve(base, reference))
            approxs = {k: _build(k, cfg, model, data, fit) for k in names}
            if "approximation_file" in cfg:
                approxs["file"] = _load_approx(_resolve(base, cfg["approximation_file"]))
            if any(a.dim > 3 for a in approxs.values()):
                raise ConfigError("TV by quadrature supports at most 3 dimensions")
            tvs = {k: tv_distance(ref, a) for k, a in approxs.items()}
            masses = {k: integrate_density(a.log_density, default_box(a)) for k, a in approxs.items()}
            report = {"task": "tv", "reference": reference, "tv": tvs, "normalization": masses}
            if "gaussian" in tvs and "skew_modal" in tvs:
                report["skew_modal_better"] = bool(tvs["skew_modal"] < tvs["gaussian"])
        elif task == "functional":
            reference = cfg.get("reference", "exact")
            if reference == "exact":
                ref = exact_posterior(model, data)
            else:
                ref = read_csv(_resolve(base, reference))
            m = cfg.get("m", 100_000)
            seed = args.seed if args.seed is not None else cfg.get("seed", 0)
            report = {"task": "functional", "reference": reference, "results": {}}
            for k in names:
                rep = functional_error(_build(k, cfg, model, data, fit), ref, None, m, seed)
                report["results"][k] = rep.to_dict()
        else:  # ave_pr
            if data.covariates is None or "reference" not in cfg:
                raise ConfigError("ave_pr needs covariates and a reference sample CSV")
            ref = read_csv(_resolve(base, cfg["reference"]))
            m = cfg.get("m", 10_000)
            seed = args.seed if args.seed is not None else cfg.get("seed", 0)
            link = cfg.get("link", "probit" if model.name == "probit_gaussian" else "logit")
            report = {"task": "ave_pr", "link": link, "ave_pr": {}}
            for k in names:
                draws = sample(_build(k, cfg, model, data, fit), m, seed).points
                report["ave_pr"][k] = average_probability_error(ref, draws, data.covariates, link)
    _emit(report)
    out = _out_path(args, cfg, base)
    if out is not None:
        jsonio.dump(report, out)
    return code


def cmd_bench(args) -> int:
    cfg = _load_config(args.config, BENCH_SCHEMA)
    base = Path(args.config).parent
    study = {k: v for k, v in cfg.items() if k not in ("output", "csv_output")}
    if args.seed is not None:
        study["seed"] = args.seed
    try:
        sc = StudyConfig.from_dict(study)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = run_study(sc, jobs=args.jobs)
    out = _out_path(args, cfg, base)
    summary = {
        "event": "study",
        "slopes": report.slopes,
        "equal_accuracy": report.to_dict()["equal_accuracy"],
        "theta_star": report.theta_star,
        "missing_cells": report.missing,
    }
    if out is not None:
        report.write_json(out)
        csv_path = _resolve(base, cfg["csv_output"]) if "csv_output" in cfg else out.with_suffix(".csv")
        report.write_csv(csv_path)
        summary["json"] = str(out)
        summary["csv"] = str(csv_path)
    _emit(summary)
    return EXIT_OK


COMMANDS = {
    "approx": cmd_approx,
    "sample": cmd_sample,
    "marginal": cmd_marginal,
    "diagnose": cmd_diagnose,
    "bench": cmd_bench,
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="JSON config file", **kw)
    p.add_argument("--seed", type=_u64, help="unsigned 64-bit seed (overrides the config)", **kw)
    p.add_argument("--out", help="output path (overrides the config)", **kw)
    p.add_argument("--jobs", type=_positive, help="worker processes (bench only)", **({"default": 1} if not suppress else kw))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skewmodal", description="Skew-modal posterior approximations.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("approx", "marginal", "diagnose", "bench", "sample"):
        sp = sub.add_parser(name)
        _add_globals(sp, suppress=True)
        if name == "sample":
            sp.add_argument("--n-draws", type=_positive, dest="n_draws", default=None)
            sp.add_argument("--ks-check", action="store_true", dest="ks_check")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.n_draws = getattr(args, "n_draws", None)
    args.ks_check = getattr(args, "ks_check", False)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, BadIndexSet, UnsupportedModel, MetricMissing, EmptyReference) as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    except SkewModalError as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
