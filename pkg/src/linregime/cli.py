"""Command-line pipeline: fit, bootstrap-ci, sweep, simulate, rate.

Every run resolves its configuration (JSON config file overridden by CLI
flags), embeds it in the JSON report together with the seed, and exits 0
only if the report was written and passed schema validation. Module errors
surface as a machine-readable error object on stderr with exit code 2
(unexpected errors: exit code 1).
"""

from __future__ import annotations

import argparse
import csv as _csv
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import kernels
from .aipw import ValueEvaluator, value_ci
from .bootstrap import (
    DEFAULT_EPSILON_GRID,
    bootstrap_draws,
    epsilon_sweep,
    hessian_fd,
    write_draws_csv,
)
from .data import ColumnConfig, load_csv
from .exceptions import DataError, LinregimeError
from .nuisance import EstimatorSpec, fit_nuisance
from .search import SearchConfig, search
from .simulate import (
    DgpSpec,
    format_coverage_table,
    generate,
    oracle_functions,
    rate_diagnostic,
    run_coverage_study,
)

SCHEMA_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _first(*values):
    for v in values:
        if v is not None:
            return v
    return None


def _load_file_config(args) -> dict:
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _resolve_run(args, fc: dict) -> dict:
    return {
        "seed": int(_first(getattr(args, "seed", None), fc.get("seed"), 0)),
        "threads": int(_first(getattr(args, "threads", None), fc.get("threads"), os.cpu_count() or 1)),
        "level": float(_first(getattr(args, "level", None), fc.get("level"), 0.95)),
        "deterministic": bool(getattr(args, "deterministic", False)),
    }


def _resolve_dgp(args, fc: dict, run: dict, require: bool):
    raw = dict(fc.get("data", {}).get("dgp", {}))
    if getattr(args, "dgp", None):
        with open(args.dgp, encoding="utf-8") as fh:
            raw.update(json.load(fh))
    if getattr(args, "dgp_n", None):
        raw["n"] = args.dgp_n
    if "n" not in raw:
        if require:
            raise DataError("no generator sample size: pass --dgp-n or a dgp config entry")
        return None
    raw.setdefault("seed", run["seed"])
    return DgpSpec.from_dict(raw)


def _resolve_data(args, fc: dict, run: dict):
    """Returns (dataset, data_meta, dgp_spec_or_None)."""
    data_cfg = fc.get("data", {})
    csv_path = _first(getattr(args, "csv", None), data_cfg.get("csv"))
    dgp = _resolve_dgp(args, fc, run, require=False)
    if csv_path and dgp is not None:
        raise DataError("exactly one data source allowed: both CSV and generator given")
    if csv_path:
        col_raw = data_cfg.get("columns")
        if getattr(args, "columns_config", None):
            with open(args.columns_config, encoding="utf-8") as fh:
                col_raw = json.load(fh)
        if getattr(args, "outcome", None) or getattr(args, "treatment", None) or getattr(args, "covariates", None):
            col_raw = {
                "outcome": args.outcome,
                "treatment": args.treatment,
                "covariates": args.covariates,
                "intercept": not getattr(args, "no_intercept", False),
                "standardize": bool(getattr(args, "standardize", False)),
            }
        if not col_raw:
            raise DataError(
                "CSV source needs column roles (--columns-config or --outcome/--treatment/--covariates)"
            )
        missing = [k for k in ("outcome", "treatment", "covariates") if not col_raw.get(k)]
        if missing:
            raise DataError("column mapping incomplete: missing %s" % ", ".join(missing))
        columns = ColumnConfig(
            outcome=col_raw["outcome"],
            treatment=col_raw["treatment"],
            covariates=list(col_raw["covariates"]),
            intercept=bool(col_raw.get("intercept", True)),
            standardize=bool(col_raw.get("standardize", False)),
        )
        data = load_csv(csv_path, columns)
        meta = {
            "csv": str(csv_path),
            "columns": {
                "outcome": columns.outcome,
                "treatment": columns.treatment,
                "covariates": list(columns.covariates),
                "intercept": columns.intercept,
                "standardize": columns.standardize,
            },
            "standardization": data.standardization,
            "n": data.n,
        }
        return data, meta, None
    if dgp is None:
        raise DataError("no data source: pass --csv or --dgp-n/--dgp")
    return generate(dgp), {"dgp": dgp.to_dict()}, dgp


def _resolve_estimator(args, fc: dict, dgp) -> tuple[EstimatorSpec, tuple | None]:
    raw = dict(fc.get("nuisance", {}))
    if getattr(args, "nuisance", None):
        raw["method"] = args.nuisance
    if getattr(args, "bandwidth", None) is not None:
        raw["bandwidth"] = args.bandwidth
    if getattr(args, "cross_fit", None):
        raw["cross_fit"] = True
    raw.setdefault("method", "logistic")
    spec = EstimatorSpec.from_dict(raw)
    oracle_fns = None
    if spec.method == "oracle":
        if dgp is None:
            raise DataError("--nuisance oracle requires generated data (--dgp-n/--dgp)")
        oracle_fns = oracle_functions(dgp)
    return spec, oracle_fns


def _resolve_search(args, fc: dict, run: dict) -> SearchConfig:
    raw = dict(fc.get("search", {}))
    for key, attr in (
        ("population", "population"),
        ("generations", "generations"),
        ("mutation_scale", "mutation_scale"),
        ("refine_resolution", "refine_resolution"),
    ):
        val = getattr(args, attr, None)
        if val is not None:
            raw[key] = val
    raw["seed"] = run["seed"]
    return SearchConfig.from_dict(raw)


def _resolve_bootstrap(args, fc: dict) -> dict:
    raw = dict(fc.get("bootstrap", {}))
    out = {
        "n_draws": int(_first(getattr(args, "bootstrap", None), raw.get("n_draws"), 400)),
        "epsilon": float(_first(getattr(args, "epsilon", None), raw.get("epsilon"), 0.5)),
        "refit": bool(_first(getattr(args, "refit_nuisance", None), raw.get("refit"), False)),
    }
    grid = _first(getattr(args, "epsilon_grid", None), raw.get("epsilon_grid"))
    if isinstance(grid, str):
        grid = [float(tok) for tok in grid.split(",") if tok.strip()]
    out["epsilon_grid"] = list(grid) if grid else list(DEFAULT_EPSILON_GRID)
    return out


def _write_trace_csv(result, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["generation", "best_value"])
        for g, v in enumerate(result.trace):
            writer.writerow([g, repr(float(v))])


def _validate_report(report: dict) -> None:
    required = {"schema_version": int, "command": str, "config": dict, "results": dict}
    for key, typ in required.items():
        if key not in report or not isinstance(report[key], typ):
            raise LinregimeError("report failed schema validation: field %r" % key)


def _emit_report(report: dict, args) -> None:
    report = _jsonable(report)
    if not getattr(args, "deterministic", False):
        report["created_at"] = datetime.now(timezone.utc).isoformat()
    _validate_report(report)
    text = json.dumps(report, indent=2, sort_keys=True)
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _fit_pipeline(args):
    """Shared front half: data, nuisance fit, search, value CI."""
    fc = _load_file_config(args)
    run = _resolve_run(args, fc)
    data, data_meta, dgp = _resolve_data(args, fc, run)
    est_spec, oracle_fns = _resolve_estimator(args, fc, dgp)
    search_cfg = _resolve_search(args, fc, run)
    nf = fit_nuisance(data, est_spec, oracle_fns=oracle_fns)
    result = search(data, nf, search_cfg)
    report = value_ci(data, nf, result.beta_hat, level=run["level"])
    config = {
        "seed": run["seed"],
        "threads": run["threads"],
        "level": run["level"],
        "data": data_meta,
        "nuisance": est_spec.to_dict(),
        "search": search_cfg.to_dict(),
    }
    return fc, run, data, dgp, est_spec, search_cfg, nf, result, report, config


def cmd_fit(args) -> None:
    fc, run, data, dgp, est_spec, search_cfg, nf, result, vreport, config = _fit_pipeline(args)
    if getattr(args, "trace_csv", None):
        _write_trace_csv(result, args.trace_csv)
    _emit_report(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "fit",
            "config": config,
            "results": {
                "column_names": list(data.column_names),
                "search": result.to_dict(),
                "value": vreport.to_dict(),
            },
            "diagnostics": {
                "nuisance": nf.diagnostics,
                "kernel_backend": kernels.BACKEND,
            },
        },
        args,
    )


def cmd_bootstrap_ci(args) -> None:
    fc, run, data, dgp, est_spec, search_cfg, nf, result, vreport, config = _fit_pipeline(args)
    boot = _resolve_bootstrap(args, fc)
    config["bootstrap"] = {k: boot[k] for k in ("n_draws", "epsilon", "refit")}
    evaluator = ValueEvaluator(data, nf)
    hess = hessian_fd(evaluator.value, result.beta_hat, boot["epsilon"])
    report = bootstrap_draws(
        data, nf, result.beta_hat, hess, boot["n_draws"],
        refit=boot["refit"], estimator_spec=est_spec if boot["refit"] else None,
        seed=run["seed"], search_config=search_cfg, level=run["level"],
        n_jobs=run["threads"],
    )
    if getattr(args, "draws_csv", None):
        write_draws_csv(report, args.draws_csv, column_names=data.column_names)
    _emit_report(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "bootstrap-ci",
            "config": config,
            "results": {
                "column_names": list(data.column_names),
                "search": result.to_dict(),
                "value": vreport.to_dict(),
                "bootstrap": report.to_dict(column_names=data.column_names),
                "hessian": hess.to_dict(),
            },
            "diagnostics": {
                "nuisance": nf.diagnostics,
                "kernel_backend": kernels.BACKEND,
            },
        },
        args,
    )


def cmd_sweep(args) -> None:
    fc, run, data, dgp, est_spec, search_cfg, nf, result, vreport, config = _fit_pipeline(args)
    boot = _resolve_bootstrap(args, fc)
    config["bootstrap"] = {
        "n_draws": boot["n_draws"],
        "epsilon_grid": boot["epsilon_grid"],
        "refit": boot["refit"],
    }
    reports, recommended = epsilon_sweep(
        data, nf, result.beta_hat, boot["epsilon_grid"], boot["n_draws"],
        refit=boot["refit"], estimator_spec=est_spec if boot["refit"] else None,
        seed=run["seed"], search_config=search_cfg, level=run["level"],
        n_jobs=run["threads"],
    )
    _emit_report(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "sweep",
            "config": config,
            "results": {
                "column_names": list(data.column_names),
                "search": result.to_dict(),
                "value": vreport.to_dict(),
                "per_epsilon": [r.to_dict(column_names=data.column_names) for r in reports],
                "summed_lengths": [float(np.sum(r.lengths)) for r in reports],
                "recommended_epsilon": recommended,
            },
            "diagnostics": {"kernel_backend": kernels.BACKEND},
        },
        args,
    )


def cmd_simulate(args) -> None:
    fc = _load_file_config(args)
    run = _resolve_run(args, fc)
    if getattr(args, "full_scale", False):
        for name, val in (("dgp_n", 20000), ("reps", 100), ("bootstrap", 400)):
            if getattr(args, name, None) is None:
                setattr(args, name, val)
        if getattr(args, "nuisance", None) is None:
            args.nuisance = "local-linear-kernel"
        if getattr(args, "refit_nuisance", None) is None:
            args.refit_nuisance = True
    dgp = _resolve_dgp(args, fc, run, require=True)
    est_spec, _oracle = _resolve_estimator(args, fc, dgp)
    search_cfg = _resolve_search(args, fc, run)
    boot = _resolve_bootstrap(args, fc)
    t_reps = int(_first(getattr(args, "reps", None), fc.get("reps"), 20))
    # one study per step value when a grid is given (the full table layout);
    # otherwise a single column at --epsilon
    eps_values = boot["epsilon_grid"] if getattr(args, "epsilon_grid", None) else [boot["epsilon"]]
    truth_cache: dict = {}
    summaries = {}
    for eps in eps_values:
        summaries[eps] = run_coverage_study(
            dgp, t_reps,
            search_config=search_cfg, estimator_spec=est_spec,
            n_draws=boot["n_draws"], epsilon=eps, refit=boot["refit"],
            level=run["level"], seed=run["seed"], n_jobs=run["threads"],
            **truth_cache,
        )
        truth_cache = {
            "true_value": summaries[eps].true_value,
            "true_value_se": summaries[eps].true_value_se,
        }
    print(format_coverage_table(summaries), file=sys.stderr)
    results = summaries[eps_values[0]].to_dict()
    if len(eps_values) > 1:
        results = {
            "per_epsilon": {repr(e): s.to_dict() for e, s in summaries.items()},
            "epsilon_grid": eps_values,
        }
    _emit_report(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "config": {
                "seed": run["seed"],
                "threads": run["threads"],
                "level": run["level"],
                "reps": t_reps,
                "data": {"dgp": dgp.to_dict()},
                "nuisance": est_spec.to_dict(),
                "search": search_cfg.to_dict(),
                "bootstrap": {k: boot[k] for k in ("n_draws", "epsilon", "refit")}
                | {"epsilon_grid": eps_values if len(eps_values) > 1 else None},
            },
            "results": results,
            "diagnostics": {"kernel_backend": kernels.BACKEND},
        },
        args,
    )


def cmd_rate(args) -> None:
    fc = _load_file_config(args)
    run = _resolve_run(args, fc)
    dgp_raw = dict(fc.get("data", {}).get("dgp", {}))
    if getattr(args, "dgp", None):
        with open(args.dgp, encoding="utf-8") as fh:
            dgp_raw.update(json.load(fh))
    dgp_raw.setdefault("n", 1000)  # overridden per size below
    dgp_raw.setdefault("seed", run["seed"])
    dgp = DgpSpec.from_dict(dgp_raw)
    est_spec, _oracle = _resolve_estimator(args, fc, dgp)
    search_cfg = _resolve_search(args, fc, run)
    sizes = [int(tok) for tok in (args.sizes or "1000,8000").split(",") if tok.strip()]
    reps = int(_first(getattr(args, "reps", None), fc.get("reps"), 30))
    report = rate_diagnostic(
        dgp, sizes, reps,
        search_config=search_cfg, estimator_spec=est_spec,
        seed=run["seed"], n_jobs=run["threads"],
    )
    _emit_report(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "rate",
            "config": {
                "seed": run["seed"],
                "threads": run["threads"],
                "sizes": sizes,
                "reps": reps,
                "data": {"dgp": dgp.to_dict()},
                "nuisance": est_spec.to_dict(),
                "search": search_cfg.to_dict(),
            },
            "results": report.to_dict(),
            "diagnostics": {"kernel_backend": kernels.BACKEND},
        },
        args,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linregime",
        description="Optimal linear treatment regimes: AIPW value search and bootstrap inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", type=Path, help="JSON run config; CLI flags override it")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: machine parallelism)")
        sp.add_argument("--out", type=Path, default=None, help="report path (default: stdout)")
        sp.add_argument("--deterministic", action="store_true",
                        help="omit timestamps so identical runs are byte-identical")
        sp.add_argument("--level", type=float, default=None, help="confidence level (default 0.95)")

    def add_data(sp):
        sp.add_argument("--csv", type=Path, help="CSV data file (needs column roles)")
        sp.add_argument("--columns-config", type=Path, help="JSON column-role mapping")
        sp.add_argument("--outcome", default=None)
        sp.add_argument("--treatment", default=None)
        sp.add_argument("--covariates", nargs="+", default=None)
        sp.add_argument("--standardize", action="store_true", default=None)
        sp.add_argument("--no-intercept", action="store_true")
        sp.add_argument("--dgp-n", type=int, default=None, help="generate a synthetic sample of this size")
        sp.add_argument("--dgp", type=Path, default=None, help="JSON generator spec")

    def add_nuisance(sp):
        sp.add_argument("--nuisance", choices=["logistic", "local-linear-kernel", "oracle"], default=None)
        sp.add_argument("--bandwidth", type=float, default=None)
        sp.add_argument("--cross-fit", action="store_true", default=None)

    def add_search(sp):
        sp.add_argument("--population", type=int, default=None)
        sp.add_argument("--generations", type=int, default=None)
        sp.add_argument("--mutation-scale", type=float, default=None)
        sp.add_argument("--refine-resolution", type=float, default=None)
        sp.add_argument("--trace-csv", type=Path, default=None)

    def add_bootstrap(sp):
        sp.add_argument("--bootstrap", type=int, default=None, metavar="B")
        sp.add_argument("--epsilon", type=float, default=None)
        sp.add_argument("--epsilon-grid", type=str, default=None)
        sp.add_argument("--refit-nuisance", action="store_true", default=None)
        sp.add_argument("--draws-csv", type=Path, default=None)

    sp_fit = sub.add_parser("fit", help="estimate the optimal regime and its value CI")
    for add in (add_common, add_data, add_nuisance, add_search):
        add(sp_fit)
    sp_fit.set_defaults(func=cmd_fit)

    sp_bci = sub.add_parser("bootstrap-ci", help="fit plus percentile CIs for the coefficients")
    for add in (add_common, add_data, add_nuisance, add_search, add_bootstrap):
        add(sp_bci)
    sp_bci.set_defaults(func=cmd_bootstrap_ci)

    sp_sweep = sub.add_parser("sweep", help="bootstrap across a grid of step sizes")
    for add in (add_common, add_data, add_nuisance, add_search, add_bootstrap):
        add(sp_sweep)
    sp_sweep.set_defaults(func=cmd_sweep)

    sp_sim = sub.add_parser("simulate", help="Monte Carlo coverage/length study on generated data")
    for add in (add_common, add_nuisance, add_search, add_bootstrap):
        add(sp_sim)
    sp_sim.add_argument("--dgp-n", type=int, default=None)
    sp_sim.add_argument("--dgp", type=Path, default=None)
    sp_sim.add_argument("--reps", type=int, default=None)
    sp_sim.add_argument("--full-scale", action="store_true",
                        help="benchmark protocol: n=20000, 100 reps, 400 draws, kernel nuisance, refit")
    sp_sim.set_defaults(func=cmd_simulate)

    sp_rate = sub.add_parser("rate", help="median coefficient error versus sample size")
    for add in (add_common, add_nuisance, add_search):
        add(sp_rate)
    sp_rate.add_argument("--dgp", type=Path, default=None)
    sp_rate.add_argument("--sizes", type=str, default=None, help="comma-separated sample sizes")
    sp_rate.add_argument("--reps", type=int, default=None)
    sp_rate.set_defaults(func=cmd_rate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return 0
    except LinregimeError as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - unexpected failure path
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
