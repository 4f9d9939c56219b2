"""Command-line interface.

Subcommands cover the full pipeline: ``synth`` (synthetic cohorts),
``train``, ``predict``, ``eval``, ``cv`` (grid search with patient-level
K-fold CV), and ``stability`` (selection probabilities). Every command
writes a manifest.json recording its resolved parameters and input digests;
re-running a command rebuilt from the manifest reproduces every other output
byte for byte. Flags override config-file values, which override built-in
defaults. Report-generating commands also render PNG figures next to their
delimited outputs unless --no-figures is given.

Exit codes: 0 success, 1 internal error, 2 bad input, 3 solver hit the
iteration cap (outputs still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .core import GraphMode, InputError, PenaltyConfig, predict_tasks
from .data import (
    DEFAULT_TIMEPOINTS,
    SyntheticSpec,
    apply_preprocessing,
    dataset_to_table,
    generate_synthetic,
    load_csv,
    preprocess,
    transform_features,
    write_table_csv,
    write_weights_csv,
)
from .manifest import build_manifest, write_manifest
from .metrics import evaluate_predictions
from .model_io import load_model, save_model
from .model_selection import (
    GRAPH_LAMBDA_GRID,
    LAMBDA_GRID,
    TAU_GRID,
    GridSpec,
    cross_validate,
)
from .similarity import build_fusion_graph, write_matrix_csv
from .solver import MAX_ITER, SolverOptions, solve
from .stability import stability_select

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
EXIT_MAX_ITER = 3

DEFAULTS = {
    "lambda1": 0.0,
    "lambda2": 0.0,
    "lambda3": 0.0,
    "tau": 0.5,
    "rho": 1.0,
    "graph_mode": "correlation",
    "max_iters": 5000,
    "eps_abs": 1e-6,
    "eps_rel": 1e-4,
    "folds": 10,
    "metric": "nmse",
    "grid_file": None,
    "runs": 100,
    "subsample": 0.5,
    "pi": 0.8,
    "seed": 0,
    "threads": None,
    "figures": True,
    "timepoint_labels": None,
    # synth only
    "patients": 100,
    "features": 12,
    "timepoints": 4,
    "noise_sigma": 0.1,
    "dropout": None,
    "blocks": None,
    "block_rho": 0.8,
    "signal_features": None,
    "signal_scale": 1.0,
    "drift": 0.1,
}


def _add(parser, *names, **kwargs):
    kwargs.setdefault("default", None)
    parser.add_argument(*names, **kwargs)


def _penalty_args(parser):
    _add(parser, "--lambda1", type=float, help="elementwise l1 weight")
    _add(parser, "--lambda2", type=float, help="similarity-graph penalty weight")
    _add(parser, "--lambda3", type=float, help="temporal fused-lasso weight")
    _add(parser, "--tau", type=float, help="absolute correlation threshold in [0, 1]")
    _add(parser, "--rho", type=float, help="ADMM penalty parameter")
    _add(parser, "--graph-mode", choices=["correlation", "laplacian"],
         help="similarity matrix form fed to the graph penalty")


def _solver_args(parser):
    _add(parser, "--max-iters", type=int, help="ADMM iteration budget")
    _add(parser, "--eps-abs", type=float, help="absolute stopping tolerance")
    _add(parser, "--eps-rel", type=float, help="relative stopping tolerance")


def _common_args(parser, figures=True):
    parser.add_argument("--out-dir", required=True, help="directory for outputs")
    _add(parser, "--config", help="JSON config file; flags win over its keys")
    _add(parser, "--seed", type=int)
    if figures:
        _add(parser, "--figures", action=argparse.BooleanOptionalAction,
             help="render PNG figures next to the delimited outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusedmtl",
        description="Multi-task longitudinal regression with fused correlation-graph "
                    "and temporal-smoothness penalties.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV with known weights")
    _common_args(p, figures=False)
    _add(p, "--patients", type=int, help="baseline cohort size")
    _add(p, "--features", type=int)
    _add(p, "--timepoints", type=int, help="number of timepoints")
    _add(p, "--noise-sigma", type=float)
    _add(p, "--dropout", help="per-timepoint retention fractions, e.g. 1.0,0.8,0.5")
    _add(p, "--blocks", help="correlated feature blocks as ranges, e.g. 0:4,4:8")
    _add(p, "--block-rho", type=float, help="within-block feature correlation")
    _add(p, "--signal-features", type=int, help="number of features with true signal")
    _add(p, "--signal-scale", type=float)
    _add(p, "--drift", type=float, help="relative weight drift between timepoints")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model on a longitudinal CSV")
    _common_args(p)
    p.add_argument("--input", required=True, help="training CSV")
    _add(p, "--timepoint-labels", help="comma-separated ordered timepoint labels")
    _penalty_args(p)
    _solver_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict targets for a feature CSV")
    _common_args(p, figures=False)
    p.add_argument("--model", required=True, help="model JSON from train or cv")
    p.add_argument("--input", required=True, help="feature CSV (targets optional)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a model against a labeled CSV")
    _common_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="labeled CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="grid search with patient-level K-fold CV")
    _common_args(p)
    p.add_argument("--input", required=True)
    _add(p, "--timepoint-labels")
    _add(p, "--grid-file", help="JSON file with lambda1/lambda2/lambda3/tau lists")
    _add(p, "--folds", type=int)
    _add(p, "--metric", choices=["nmse", "wr", "mean_rmse"])
    _add(p, "--threads", type=int)
    _penalty_args(p)
    _solver_args(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("stability", help="selection probabilities via subsample refits")
    _common_args(p)
    p.add_argument("--input", required=True)
    _add(p, "--timepoint-labels")
    _add(p, "--runs", type=int, help="number of subsample refits")
    _add(p, "--subsample", type=float, help="patient fraction per run")
    _add(p, "--pi", type=float, help="stability threshold on max probability")
    _add(p, "--threads", type=int)
    _penalty_args(p)
    _solver_args(p)
    p.set_defaults(func=cmd_stability)

    return parser


def resolve_params(args: argparse.Namespace, keys: list[str]) -> dict:
    """Merge flag values, config-file values, and built-in defaults."""
    config = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            config = json.load(fh)
        unknown = set(config) - set(DEFAULTS) - {"input", "model", "out_dir"}
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key in keys:
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, DEFAULTS.get(key))
        resolved[key] = value
    for key in ("input", "model"):
        if hasattr(args, key):
            resolved[key] = getattr(args, key)
    resolved["out_dir"] = args.out_dir
    return resolved


def _out_dir(params: dict) -> Path:
    out = Path(params["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _timepoint_labels(params: dict):
    raw = params.get("timepoint_labels")
    if raw is None:
        return DEFAULT_TIMEPOINTS
    return tuple(s.strip() for s in str(raw).split(",") if s.strip())


def _solver_options(params: dict) -> SolverOptions:
    return SolverOptions(
        max_iterations=int(params["max_iters"]),
        eps_abs=float(params["eps_abs"]),
        eps_rel=float(params["eps_rel"]),
    )


def _penalty_config(params: dict) -> PenaltyConfig:
    return PenaltyConfig(
        lambda1=float(params["lambda1"]),
        lambda2=float(params["lambda2"]),
        lambda3=float(params["lambda3"]),
        tau=float(params["tau"]),
        rho=float(params["rho"]),
        graph_mode=GraphMode(params["graph_mode"]),
    )


def _threads(params: dict) -> int:
    value = params.get("threads")
    return int(value) if value else (os.cpu_count() or 1)


def _parse_blocks(raw) -> tuple[tuple[int, ...], ...]:
    if not raw:
        return ()
    blocks = []
    for part in str(raw).split(","):
        lo, hi = part.split(":")
        blocks.append(tuple(range(int(lo), int(hi))))
    return tuple(blocks)


def _parse_fractions(raw):
    if not raw:
        return None
    return tuple(float(s) for s in str(raw).split(","))


def cmd_synth(args) -> int:
    keys = ["seed", "patients", "features", "timepoints", "noise_sigma", "dropout",
            "blocks", "block_rho", "signal_features", "signal_scale", "drift"]
    params = resolve_params(args, keys)
    out = _out_dir(params)

    spec = SyntheticSpec(
        n_patients=int(params["patients"]),
        n_features=int(params["features"]),
        n_timepoints=int(params["timepoints"]),
        noise_sigma=float(params["noise_sigma"]),
        dropout_schedule=_parse_fractions(params["dropout"]),
        correlation_blocks=_parse_blocks(params["blocks"]),
        block_rho=float(params["block_rho"]),
        n_signal_features=(
            int(params["signal_features"]) if params["signal_features"] is not None else None
        ),
        signal_scale=float(params["signal_scale"]),
        temporal_drift=float(params["drift"]),
        seed=int(params["seed"]),
    )
    dataset, true_W = generate_synthetic(spec)

    dataset_path = out / "dataset.csv"
    write_table_csv(dataset_to_table(dataset), dataset_path)
    write_weights_csv(out / "true_weights.csv", true_W,
                      dataset.feature_names, dataset.timepoint_labels)
    write_manifest(out / "manifest.json", build_manifest("synth", params, []))
    print(f"wrote {dataset_path} ({sum(dataset.patient_counts)} rows, "
          f"p={dataset.n_features}, t={dataset.n_tasks})")
    return EXIT_OK


def cmd_train(args) -> int:
    keys = ["seed", "figures", "timepoint_labels", "lambda1", "lambda2", "lambda3",
            "tau", "rho", "graph_mode", "max_iters", "eps_abs", "eps_rel"]
    params = resolve_params(args, keys)
    out = _out_dir(params)

    table = load_csv(params["input"], _timepoint_labels(params))
    dataset, prep = preprocess(table)
    cfg = _penalty_config(params)
    graph = build_fusion_graph(dataset, cfg.tau, cfg.graph_mode)
    result = solve(dataset, graph, cfg, _solver_options(params))

    last = result.trace.last()
    save_model(
        out / "model.json",
        result.weights,
        result.sparse_weights,
        dataset.feature_names,
        dataset.timepoint_labels,
        cfg,
        prep,
        graph,
        {
            "status": result.status,
            "iterations": result.iterations,
            "objective": last.objective,
            "r_primal": last.r_primal,
            "s_dual": last.s_dual,
        },
    )
    result.trace.to_csv(out / "trace.csv")
    write_matrix_csv(out / "similarity.csv", graph.S, dataset.feature_names)
    if params["figures"]:
        from .plots import save_convergence_figure

        save_convergence_figure(result.trace, out / "convergence.png")
    write_manifest(out / "manifest.json", build_manifest("train", params, [params["input"]]))

    print(f"status: {result.status} after {result.iterations} iterations")
    print(f"objective: {last.objective!r}")
    print(f"residuals: primal {last.r_primal:.3e}, dual {last.s_dual:.3e}")
    if result.status == MAX_ITER:
        print("warning: stopped at the iteration cap before converging", file=sys.stderr)
        return EXIT_MAX_ITER
    return EXIT_OK


def cmd_predict(args) -> int:
    params = resolve_params(args, ["seed"])
    out = _out_dir(params)
    model = load_model(params["model"])
    if model.preprocess is None:
        raise InputError("model file lacks preprocessing parameters")
    table = load_csv(params["input"], model.timepoint_labels)

    import csv as _csv

    pred_path = out / "predictions.csv"
    with open(pred_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["patient_id", "timepoint", "prediction"])
        for label, ids, Z in transform_features(table, model.preprocess):
            w = model.weights.values[:, model.timepoint_labels.index(label)]
            for pid, value in zip(ids, Z @ w):
                writer.writerow([pid, label, repr(float(value))])
    write_manifest(
        out / "manifest.json",
        build_manifest("predict", params, [params["model"], params["input"]]),
    )
    print(f"wrote {pred_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = resolve_params(args, ["seed", "figures"])
    out = _out_dir(params)
    model = load_model(params["model"])
    if model.preprocess is None:
        raise InputError("model file lacks preprocessing parameters")
    table = load_csv(params["input"], model.timepoint_labels)
    test = apply_preprocessing(table, model.preprocess)

    cols = [model.timepoint_labels.index(l) for l in test.timepoint_labels]
    W = model.weights.values[:, cols]
    yhat = predict_tasks(W, test)
    y = [task.target for task in test.tasks]
    report = evaluate_predictions(y, yhat, test.timepoint_labels)

    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    if params["figures"]:
        from .plots import save_rmse_figure

        save_rmse_figure(report, out / "rmse.png")
    write_manifest(
        out / "manifest.json",
        build_manifest("eval", params, [params["model"], params["input"]]),
    )
    print(f"nmse: {report.nmse!r}")
    print(f"wr: {report.wr!r}")
    print("rmse per timepoint: "
          + ", ".join(f"{l}={v:.4f}" for l, v in zip(report.timepoint_labels,
                                                     report.per_task_rmse)))
    return EXIT_OK


def _grid_from_file(path) -> dict:
    with open(path) as fh:
        raw = json.load(fh)
    allowed = {"lambda1", "lambda2", "lambda3", "tau"}
    unknown = set(raw) - allowed
    if unknown:
        raise InputError(f"unknown grid keys: {sorted(unknown)}")
    return raw


def cmd_cv(args) -> int:
    keys = ["seed", "figures", "timepoint_labels", "grid_file", "folds", "metric",
            "rho", "graph_mode", "max_iters", "eps_abs", "eps_rel", "threads"]
    params = resolve_params(args, keys)
    out = _out_dir(params)

    table = load_csv(params["input"], _timepoint_labels(params))
    dataset, prep = preprocess(table)

    raw_grid = _grid_from_file(params["grid_file"]) if params["grid_file"] else {}
    grid = GridSpec(
        lambda1_grid=tuple(raw_grid.get("lambda1", LAMBDA_GRID)),
        lambda2_grid=tuple(raw_grid.get("lambda2", GRAPH_LAMBDA_GRID)),
        lambda3_grid=tuple(raw_grid.get("lambda3", LAMBDA_GRID)),
        tau_grid=tuple(raw_grid.get("tau", TAU_GRID)),
        folds=int(params["folds"]),
        selection_metric=params["metric"],
        seed=int(params["seed"]),
    )
    base = PenaltyConfig(
        0.0, 0.0, 0.0, rho=float(params["rho"]), graph_mode=GraphMode(params["graph_mode"])
    )
    cv = cross_validate(dataset, grid, _solver_options(params), base, threads=_threads(params))

    cv.to_csv(out / "grid_scores.csv")
    cv.best_to_json(out / "best.json")
    best_cfg = base.replace(
        lambda1=cv.best.lambda1, lambda2=cv.best.lambda2,
        lambda3=cv.best.lambda3, tau=cv.best.tau,
    )
    last = cv.refit.trace.last()
    save_model(
        out / "model.json",
        cv.refit.weights,
        cv.refit.sparse_weights,
        dataset.feature_names,
        dataset.timepoint_labels,
        best_cfg,
        prep,
        cv.refit_graph,
        {
            "status": cv.refit.status,
            "iterations": cv.refit.iterations,
            "objective": last.objective,
            "r_primal": last.r_primal,
            "s_dual": last.s_dual,
        },
    )
    if params["figures"]:
        from .plots import save_grid_figure

        save_grid_figure(cv, out / "grid.png")
    write_manifest(out / "manifest.json", build_manifest("cv", params, [params["input"]]))

    n_warn = sum(c.solver_warnings for c in cv.cells)
    print(f"best cell: lambda1={cv.best.lambda1} lambda2={cv.best.lambda2} "
          f"lambda3={cv.best.lambda3} tau={cv.best.tau}")
    print(f"mean {cv.selection_metric}: {cv.best.mean!r} (std {cv.best.std!r})")
    if n_warn:
        print(f"warning: {n_warn} fold solves hit the iteration cap", file=sys.stderr)
    return EXIT_OK


def cmd_stability(args) -> int:
    keys = ["seed", "figures", "timepoint_labels", "lambda1", "lambda2", "lambda3",
            "tau", "rho", "graph_mode", "runs", "subsample", "pi",
            "max_iters", "eps_abs", "eps_rel", "threads"]
    params = resolve_params(args, keys)
    out = _out_dir(params)

    table = load_csv(params["input"], _timepoint_labels(params))
    dataset, _ = preprocess(table)
    cfg = _penalty_config(params)
    result = stability_select(
        dataset,
        cfg,
        runs=int(params["runs"]),
        fraction=float(params["subsample"]),
        pi=float(params["pi"]),
        seed=int(params["seed"]),
        opts=_solver_options(params),
        threads=_threads(params),
    )

    result.to_csv(out / "stability.csv", dataset.feature_names, dataset.timepoint_labels)
    result.stable_to_json(out / "stable_features.json", dataset.feature_names)
    if params["figures"]:
        from .plots import save_stability_heatmap

        save_stability_heatmap(
            result.selection_probability,
            dataset.feature_names,
            dataset.timepoint_labels,
            out / "stability.png",
        )
    write_manifest(out / "manifest.json",
                   build_manifest("stability", params, [params["input"]]))
    print(f"stable features (pi={result.pi}): "
          + (", ".join(dataset.feature_names[j] for j in result.stable_features) or "none"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
