"""Patient-level train/test splitting, K-fold cross-validation, and grid search.

Patients, not rows, are partitioned: a held-out patient is excluded from
every timepoint simultaneously, and CV folds are built the same way, so no
patient contributes rows to both sides of any fit. The similarity graph is
rebuilt inside each fold from that fold's training rows only.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import InputError, PenaltyConfig, TaskDataset, WeightMatrix, predict_tasks
from .metrics import UndefinedMetricError, nmse, rmse, weighted_r
from .similarity import FusionGraph, build_fusion_graph
from .solver import MAX_ITER, SolverOptions, SolverResult, solve

LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 50.0, 100.0, 500.0, 1000.0)
GRAPH_LAMBDA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 11))
TAU_GRID = (0.3, 0.5, 0.7, 0.9)

METRIC_NMSE = "nmse"
METRIC_WR = "wr"
METRIC_MEAN_RMSE = "mean_rmse"
_METRICS = (METRIC_NMSE, METRIC_WR, METRIC_MEAN_RMSE)


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grids and CV settings."""

    lambda1_grid: tuple[float, ...] = LAMBDA_GRID
    lambda2_grid: tuple[float, ...] = GRAPH_LAMBDA_GRID
    lambda3_grid: tuple[float, ...] = LAMBDA_GRID
    tau_grid: tuple[float, ...] = TAU_GRID
    folds: int = 10
    selection_metric: str = METRIC_NMSE
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda1_grid", "lambda2_grid", "lambda3_grid", "tau_grid"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise InputError(f"{name} must be non-empty")
            if any(v < 0 for v in values):
                raise InputError(f"{name} values must be non-negative")
            object.__setattr__(self, name, values)
        if any(not 0.0 <= v <= 1.0 for v in self.tau_grid):
            raise InputError("tau grid values must lie in [0, 1]")
        if self.folds < 2:
            raise InputError("folds must be at least 2")
        if self.selection_metric not in _METRICS:
            raise InputError(f"selection_metric must be one of {_METRICS}")

    def cells(self) -> list[tuple[float, float, float, float]]:
        return list(
            itertools.product(
                self.lambda1_grid, self.lambda2_grid, self.lambda3_grid, self.tau_grid
            )
        )


def split_train_test(
    data: TaskDataset, test_fraction: float, seed: int
) -> tuple[TaskDataset, TaskDataset]:
    """Partition patients into train/test; same seed gives the same split."""
    if not 0.0 < test_fraction < 1.0:
        raise InputError("test_fraction must lie strictly between 0 and 1")
    patients = np.array(data.patient_id_set())
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(patients))
    n_test = int(round(len(patients) * test_fraction))
    if n_test < 1 or n_test >= len(patients):
        raise InputError("test_fraction leaves an empty split")
    test_ids = set(patients[perm[:n_test]])
    train_ids = set(patients[perm[n_test:]])
    return data.subset_patients(train_ids), data.subset_patients(test_ids)


def make_folds(
    data: TaskDataset, folds: int, seed: int
) -> list[tuple[frozenset, frozenset]]:
    """Patient-level K-fold partition as (train_ids, validation_ids) pairs.

    Every patient lands in exactly one validation fold. Raises when any fold
    would leave a task with fewer than 2 training or 2 validation rows (the
    graph, solver, and metrics all need at least two samples).
    """
    if folds < 2:
        raise InputError("folds must be at least 2")
    patients = np.array(data.patient_id_set())
    if folds > len(patients):
        raise InputError("more folds than patients")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(patients))
    groups = np.array_split(patients[perm], folds)

    out = []
    for k, group in enumerate(groups):
        val_ids = frozenset(group.tolist())
        train_ids = frozenset(patients.tolist()) - val_ids
        for label, task in zip(data.timepoint_labels, data.tasks):
            n_val = sum(pid in val_ids for pid in task.patient_ids)
            n_train = task.n_samples - n_val
            if n_train < 2 or n_val < 2:
                raise InputError(
                    f"fold {k} leaves task {label!r} with {n_train} train / "
                    f"{n_val} validation rows; reduce folds"
                )
        out.append((train_ids, val_ids))
    return out


@dataclass(frozen=True)
class CellScore:
    """Fold-aggregated score for one grid cell."""

    lambda1: float
    lambda2: float
    lambda3: float
    tau: float
    mean: float
    std: float
    fold_scores: tuple[float, ...]
    solver_warnings: int      # folds that hit max_iterations
    valid: bool               # False when a fold produced an undefined metric

    @property
    def params(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.tau)


@dataclass(frozen=True)
class CvResult:
    """All cell scores, the winning cell, and the model refit on full train."""

    cells: tuple[CellScore, ...]
    best: CellScore
    selection_metric: str
    folds: int
    seed: int
    refit: SolverResult
    refit_graph: FusionGraph | None

    @property
    def best_cell(self) -> tuple[float, float, float, float]:
        return self.best.params

    @property
    def refit_model(self) -> WeightMatrix:
        return self.refit.weights

    def to_csv(self, path) -> None:
        n_folds = len(self.cells[0].fold_scores)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["lambda1", "lambda2", "lambda3", "tau", "mean", "std", "valid",
                 "solver_warnings"] + [f"fold{k}" for k in range(n_folds)]
            )
            for c in self.cells:
                writer.writerow(
                    [repr(c.lambda1), repr(c.lambda2), repr(c.lambda3), repr(c.tau),
                     repr(c.mean), repr(c.std), int(c.valid), c.solver_warnings]
                    + [repr(s) for s in c.fold_scores]
                )

    def best_to_json(self, path) -> None:
        payload = {
            "lambda1": self.best.lambda1,
            "lambda2": self.best.lambda2,
            "lambda3": self.best.lambda3,
            "tau": self.best.tau,
            "mean_score": self.best.mean,
            "std_score": self.best.std,
            "selection_metric": self.selection_metric,
            "folds": self.folds,
            "seed": self.seed,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def score_predictions(y_list, yhat_list, metric: str) -> float:
    if metric == METRIC_NMSE:
        return nmse(y_list, yhat_list)
    if metric == METRIC_WR:
        return weighted_r(y_list, yhat_list)
    if metric == METRIC_MEAN_RMSE:
        return float(np.mean([rmse(y, yhat) for y, yhat in zip(y_list, yhat_list)]))
    raise InputError(f"unknown metric {metric!r}")


def _higher_is_better(metric: str) -> bool:
    return metric == METRIC_WR


def _score_cell(
    cell: tuple[float, float, float, float],
    fold_data: list[tuple[TaskDataset, TaskDataset]],
    graphs: dict,
    base: PenaltyConfig,
    opts: SolverOptions,
    metric: str,
) -> CellScore:
    lambda1, lambda2, lambda3, tau = cell
    cfg = base.replace(lambda1=lambda1, lambda2=lambda2, lambda3=lambda3, tau=tau)
    scores: list[float] = []
    warnings_count = 0
    valid = True
    for k, (fold_train, fold_val) in enumerate(fold_data):
        graph = graphs.get((k, tau)) if lambda2 > 0 else None
        result = solve(fold_train, graph, cfg, opts)
        if result.status == MAX_ITER:
            warnings_count += 1
        yhat = predict_tasks(result.weights, fold_val)
        y = [task.target for task in fold_val.tasks]
        try:
            scores.append(score_predictions(y, yhat, metric))
        except UndefinedMetricError:
            valid = False
            scores.append(float("nan"))
    arr = np.array(scores)
    if valid:
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    else:
        mean, std = float("nan"), float("nan")
    return CellScore(
        lambda1, lambda2, lambda3, tau,
        mean=mean, std=std, fold_scores=tuple(scores),
        solver_warnings=warnings_count, valid=valid,
    )


def cross_validate(
    train: TaskDataset,
    grid: GridSpec,
    opts: SolverOptions = SolverOptions(),
    base: PenaltyConfig | None = None,
    threads: int = 1,
) -> CvResult:
    """Grid search with patient-level K-fold CV, then refit on all of train.

    For every cell, the similarity graph is rebuilt per fold from that
    fold's training portion at the cell's tau (never from validation rows).
    Cells hitting the solver's iteration cap are still scored but counted as
    warnings; cells with undefined validation metrics are disqualified. Ties
    on the mean score break toward the lexicographically smaller
    (lambda1, lambda2, lambda3, tau). Cell results are reduced in grid order
    whatever the thread count, so the outcome is independent of parallelism.
    """
    if base is None:
        base = PenaltyConfig(0.0, 0.0, 0.0)
    folds = make_folds(train, grid.folds, grid.seed)
    fold_data = [
        (train.subset_patients(tr), train.subset_patients(va)) for tr, va in folds
    ]

    # graphs depend only on (fold, tau); build once, serially, for reuse
    cells = grid.cells()
    taus_needing_graph = sorted({c[3] for c in cells if c[1] > 0})
    graphs = {}
    for k, (fold_train, _) in enumerate(fold_data):
        for tau in taus_needing_graph:
            graphs[(k, tau)] = build_fusion_graph(fold_train, tau, base.graph_mode)

    def job(cell):
        return _score_cell(cell, fold_data, graphs, base, opts, grid.selection_metric)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, cells))
    else:
        results = [job(cell) for cell in cells]

    valid_scores = [c for c in results if c.valid]
    if not valid_scores:
        raise InputError("every grid cell produced an undefined validation metric")
    sign = -1.0 if _higher_is_better(grid.selection_metric) else 1.0
    best = min(valid_scores, key=lambda c: (sign * c.mean,) + c.params)

    refit_cfg = base.replace(
        lambda1=best.lambda1, lambda2=best.lambda2, lambda3=best.lambda3, tau=best.tau
    )
    refit_graph = (
        build_fusion_graph(train, best.tau, base.graph_mode) if best.lambda2 > 0 else None
    )
    refit = solve(train, refit_graph, refit_cfg, opts)

    return CvResult(
        cells=tuple(results),
        best=best,
        selection_metric=grid.selection_metric,
        folds=grid.folds,
        seed=grid.seed,
        refit=refit,
        refit_graph=refit_graph,
    )
