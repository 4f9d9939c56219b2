"""Evaluation metrics: per-task rMSE, pooled normalized MSE, weighted correlation.

nMSE divides each task's squared error by sigma(Y_i), which is taken as the
sample variance (ddof=1) by default; pass normalizer="std" to divide by the
standard deviation instead. Undefined metrics (constant target or prediction
vectors) raise rather than silently dropping tasks, since NaNs would corrupt
model selection downstream.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, InputError

VARIANCE = "variance"
STD = "std"


class UndefinedMetricError(InputError):
    """A metric is undefined for some task (e.g. zero-variance targets)."""


def _check_pair(y, yhat, what: str):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.ndim != 1 or yhat.shape != y.shape:
        raise DimensionError(f"{what}: vectors must be 1-d and of equal length")
    if y.size == 0:
        raise InputError(f"{what}: empty vectors")
    return y, yhat


def rmse(y, yhat) -> float:
    """Root mean squared error sqrt(||y - yhat||^2 / n)."""
    y, yhat = _check_pair(y, yhat, "rmse")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def nmse(y_list, yhat_list, normalizer: str = VARIANCE) -> float:
    """Pooled normalized MSE over tasks.

    sum_i ||y_i - yhat_i||^2 / sigma(y_i), divided by the total sample
    count; sigma is the sample variance (default) or standard deviation of
    the true targets.
    """
    if normalizer not in (VARIANCE, STD):
        raise InputError(f"unknown normalizer {normalizer!r}")
    if len(y_list) != len(yhat_list) or not y_list:
        raise DimensionError("nmse: per-task lists must be non-empty and aligned")
    num = 0.0
    total_n = 0
    for i, (y, yhat) in enumerate(zip(y_list, yhat_list)):
        y, yhat = _check_pair(y, yhat, f"nmse task {i}")
        if y.size < 2:
            raise UndefinedMetricError(f"nmse undefined: task {i} has fewer than 2 samples")
        var = float(np.var(y, ddof=1))
        if var == 0.0:
            raise UndefinedMetricError(f"nmse undefined: task {i} has constant targets")
        sigma = var if normalizer == VARIANCE else float(np.sqrt(var))
        num += float(np.sum((y - yhat) ** 2)) / sigma
        total_n += y.size
    return num / total_n


def pearson(y, yhat) -> float:
    """Sample Pearson correlation of two vectors; raises when undefined."""
    y, yhat = _check_pair(y, yhat, "correlation")
    if y.size < 2:
        raise UndefinedMetricError("correlation undefined for fewer than 2 samples")
    yc = y - y.mean()
    pc = yhat - yhat.mean()
    denom = np.linalg.norm(yc) * np.linalg.norm(pc)
    if denom == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant vector")
    return float(np.clip(yc @ pc / denom, -1.0, 1.0))


def weighted_r(y_list, yhat_list) -> float:
    """Sample-count-weighted mean of per-task Pearson correlations."""
    if len(y_list) != len(yhat_list) or not y_list:
        raise DimensionError("weighted_r: per-task lists must be non-empty and aligned")
    num = 0.0
    total_n = 0
    for i, (y, yhat) in enumerate(zip(y_list, yhat_list)):
        y = np.asarray(y, dtype=float)
        try:
            corr = pearson(y, yhat)
        except UndefinedMetricError as exc:
            raise UndefinedMetricError(f"weighted_r undefined at task {i}: {exc}")
        num += corr * y.size
        total_n += y.size
    return num / total_n


@dataclass(frozen=True)
class EvaluationReport:
    """Per-task rMSE plus pooled nMSE and weighted correlation."""

    per_task_rmse: tuple[float, ...]
    nmse: float
    wr: float
    per_task_n: tuple[int, ...]
    timepoint_labels: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "per_task_rmse": list(self.per_task_rmse),
            "nmse": self.nmse,
            "wr": self.wr,
            "per_task_n": list(self.per_task_n),
            "timepoint_labels": list(self.timepoint_labels),
            "mean_rmse": float(np.mean(self.per_task_rmse)),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        """Per-timepoint rMSE table: one row per task plus a summary row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timepoint", "n_test", "rmse"])
            for label, n, value in zip(
                self.timepoint_labels, self.per_task_n, self.per_task_rmse
            ):
                writer.writerow([label, n, repr(float(value))])
            writer.writerow(["nmse", "", repr(float(self.nmse))])
            writer.writerow(["wr", "", repr(float(self.wr))])


def evaluate_predictions(
    y_list,
    yhat_list,
    timepoint_labels,
    normalizer: str = VARIANCE,
) -> EvaluationReport:
    """Compute all three metrics for aligned per-task target/prediction lists."""
    labels = tuple(str(l) for l in timepoint_labels)
    if len(labels) != len(y_list):
        raise DimensionError("one timepoint label per task is required")
    per_rmse = tuple(rmse(y, yhat) for y, yhat in zip(y_list, yhat_list))
    return EvaluationReport(
        per_task_rmse=per_rmse,
        nmse=nmse(y_list, yhat_list, normalizer=normalizer),
        wr=weighted_r(y_list, yhat_list),
        per_task_n=tuple(int(np.asarray(y).size) for y in y_list),
        timepoint_labels=labels,
    )
