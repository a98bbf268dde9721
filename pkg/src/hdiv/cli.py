"""Command-line front end: simulation grids, single-dataset fits, diagnostics.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or config
error. All CSV output uses a period decimal separator and 6 significant
digits regardless of locale.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .clime import Infeasible, NumericalFailure, Unbounded, build_precision
from .inference import (
    SingularPopulationGram,
    build_inference,
    remainder_decomposition,
)
from .matcore import NotPositiveDefinite, RngState
from .simstudy import StudyConfig, StudyError, _draw, build_model, run_study
from .twostage import (
    Dataset,
    FirstStageFit,
    TwoStageFit,
    fit_second_stage,
    fit_two_stage,
    gram,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

RUNTIME_ERRORS = (
    StudyError,
    NumericalFailure,
    Infeasible,
    Unbounded,
    NotPositiveDefinite,
    SingularPopulationGram,
    np.linalg.LinAlgError,
    FloatingPointError,
)

METRICS_COLUMNS = [
    "n", "p_x", "p_z", "s_b", "s_a", "sigma_structure",
    "coverage", "avg_length", "mse", "N", "seed",
]

FIT_COLUMNS = ["j", "beta_lasso", "beta_debiased", "se", "ci_lower", "ci_upper"]


class UsageError(Exception):
    """Bad flags, bad config, or malformed input data."""


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    for key in ("sizes", "sparsities", "structures"):
        if key not in raw:
            raise UsageError(f"config missing required key {key!r}")
    settings = {
        "sizes": raw["sizes"],
        "sparsities": raw["sparsities"],
        "structures": raw["structures"],
        "trials": int(raw.get("trials", 100)),
        "seed": int(raw.get("seed", 0)),
        "alpha": float(raw.get("alpha", 0.05)),
        "kappa": float(raw.get("kappa", 1.2)),
        "folds": int(raw.get("folds", 10)),
        "grid_size": int(raw.get("grid_size", 100)),
        "grid_ratio": float(raw.get("grid_ratio", 0.01)),
        "se_mode": str(raw.get("se_mode", "robust")),
        "diagnostics": bool(raw.get("diagnostics", False)),
    }
    return settings


def _apply_overrides(settings: dict, args: argparse.Namespace) -> dict:
    overrides = {}
    for key, attr in (
        ("seed", "seed"),
        ("trials", "trials"),
        ("alpha", "alpha"),
        ("kappa", "kappa"),
        ("se_mode", "se_mode"),
    ):
        val = getattr(args, attr, None)
        if val is not None:
            settings[key] = val
            overrides[key] = val
    return overrides


def _grid(settings: dict) -> list[StudyConfig]:
    """Cross the size tuples, sparsity pairs, and structures, in row order."""
    configs = []
    try:
        for size, spars, struct in itertools.product(
            settings["sizes"], settings["sparsities"], settings["structures"]
        ):
            n, p_x, p_z = (int(v) for v in size)
            s_b, s_a = (int(v) for v in spars)
            configs.append(
                StudyConfig(
                    n=n,
                    p_x=p_x,
                    p_z=p_z,
                    s_b=s_b,
                    s_a=s_a,
                    sigma_structure=str(struct),
                    n_trials=settings["trials"],
                    alpha=settings["alpha"],
                    kappa=settings["kappa"],
                    folds=settings["folds"],
                    grid_size=settings["grid_size"],
                    grid_ratio=settings["grid_ratio"],
                    seed=settings["seed"],
                    se_mode=settings["se_mode"],
                    diagnostics=settings["diagnostics"],
                )
            )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration grid: {exc}") from exc
    if not configs:
        raise UsageError("no configurations")
    return configs


def _resolve_threads(args: argparse.Namespace) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, int(args.threads))
    env = os.environ.get("HDIV_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"HDIV_THREADS must be an integer, got {env!r}") from exc
    return 1


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        settings = _load_config(args.config)
        overrides = _apply_overrides(settings, args)
        configs = _grid(settings)
        threads = _resolve_threads(args)
    except UsageError as exc:
        return _fail(str(exc))
    os.makedirs(args.out, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    rows = []
    try:
        for cfg in configs:
            metrics = run_study(cfg, threads=threads)
            rows.append([
                cfg.n, cfg.p_x, cfg.p_z, cfg.s_b, cfg.s_a, cfg.sigma_structure,
                _fmt(metrics.coverage), _fmt(metrics.avg_length),
                _fmt(metrics.mse), cfg.n_trials, cfg.seed,
            ])
    except RUNTIME_ERRORS as exc:
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    metrics_path = os.path.join(args.out, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        writer.writerows(rows)
    manifest = {
        "artifact_version": __version__,
        "seed": settings["seed"],
        "config": settings,
        "overrides": overrides,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "outputs": [{"path": "metrics.csv", "rows": len(rows)}],
    }
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def _load_matrix(path: str, name: str) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise UsageError(f"cannot read {name} file {path}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"{name} file {path} is malformed: {exc}") from exc
    return arr


def cmd_fit(args: argparse.Namespace) -> int:
    try:
        y = _load_matrix(args.y, "y")
        X = _load_matrix(args.x, "X")
        Z = _load_matrix(args.z, "Z")
        if y.shape[1] != 1:
            raise UsageError(f"y must have one column, got {y.shape[1]}")
        try:
            data = Dataset(y=y[:, 0], X=X, Z=Z)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    except UsageError as exc:
        return _fail(str(exc))
    rng = RngState(args.seed if args.seed is not None else 0)
    try:
        fit = fit_two_stage(data, rng)
        theta = build_precision(fit.gram, kappa=args.kappa)
        result = build_inference(
            fit, theta, data.X, data.y, alpha=args.alpha, se_mode=args.se_mode
        )
    except RUNTIME_ERRORS as exc:
        print(f"error: fit failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    lines = [",".join(FIT_COLUMNS)]
    beta_lasso = fit.second.coefficients
    for j in range(data.p_x):
        lines.append(",".join([
            str(j),
            _fmt(beta_lasso[j]),
            _fmt(result.beta_db[j]),
            _fmt(result.se[j]),
            _fmt(result.ci_lower[j]),
            _fmt(result.ci_upper[j]),
        ]))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    try:
        settings = _load_config(args.config)
        _apply_overrides(settings, args)
        cfg = _grid(settings)[0]
    except UsageError as exc:
        return _fail(str(exc))
    root = RngState(cfg.seed)
    try:
        model = build_model(cfg, root.child(0))
        trial_rng = root.child(1, 0)
        Z, D, _, u, X, y = _draw(model, cfg, trial_rng)
        if args.true_first_stage:
            first = FirstStageFit(Ahat=model.A, Dhat=D, fits=[], reports=[])
            second = fit_second_stage(
                D, y, trial_rng.child(2, 1),
                folds=cfg.folds, grid_size=cfg.grid_size,
                grid_ratio=cfg.grid_ratio,
            )
            fit = TwoStageFit(first=first, second=second, gram=gram(D))
        else:
            fit = fit_two_stage(
                Dataset(y=y, X=X, Z=Z), trial_rng.child(2),
                folds=cfg.folds, grid_size=cfg.grid_size,
                grid_ratio=cfg.grid_ratio,
            )
        theta = build_precision(fit.gram, kappa=cfg.kappa)
        diag = remainder_decomposition(model, fit, theta, u, D, X)
    except RUNTIME_ERRORS as exc:
        print(f"error: diagnosis failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report = {
        "n": cfg.n,
        "p_x": cfg.p_x,
        "p_z": cfg.p_z,
        "s_b": cfg.s_b,
        "s_a": cfg.s_a,
        "sigma_structure": cfg.sigma_structure,
        "seed": cfg.seed,
        "true_first_stage": bool(args.true_first_stage),
        "main_sup_norm": float(np.abs(diag.main_term).max()),
        "main_l2_norm": float(np.linalg.norm(diag.main_term)),
        "rem1_sup_norm": float(np.abs(diag.rem1).max()),
        "rem2_sup_norm": float(np.abs(diag.rem2).max()),
        "rem3_sup_norm": float(np.abs(diag.rem3).max()),
        "rem4_sup_norm": float(np.abs(diag.rem4).max()),
        "reconstruction_gap": diag.reconstruction_gap,
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdiv",
        description=(
            "Two-stage shrinkage estimation with debiased confidence "
            "intervals for many endogenous regressors"
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation grid")
    sim.add_argument("--config", required=True, help="JSON config path")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--trials", type=int, default=None)
    sim.add_argument("--alpha", type=float, default=None)
    sim.add_argument("--kappa", type=float, default=None)
    sim.add_argument("--se-mode", dest="se_mode",
                     choices=["robust", "homoscedastic"], default=None)
    sim.add_argument("--threads", type=int, default=None)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit one dataset from CSV files")
    fit.add_argument("y", help="response CSV, one column")
    fit.add_argument("x", help="regressor CSV, n rows by p_x columns")
    fit.add_argument("z", help="instrument CSV, n rows by p_z columns")
    fit.add_argument("--alpha", type=float, default=0.05)
    fit.add_argument("--kappa", type=float, default=1.2)
    fit.add_argument("--se-mode", dest="se_mode",
                     choices=["robust", "homoscedastic"], default="robust")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", default=None, help="write table here, else stdout")
    fit.set_defaults(func=cmd_fit)

    diag = sub.add_parser("diagnose", help="error decomposition on one trial")
    diag.add_argument("--config", required=True, help="JSON config path")
    diag.add_argument("--out", default=None, help="write JSON here, else stdout")
    diag.add_argument("--seed", type=int, default=None)
    diag.add_argument("--true-first-stage", action="store_true",
                      help="substitute the exact first-stage coefficients")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
