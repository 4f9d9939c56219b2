"""Feature-similarity graph construction.

Per-timepoint Pearson correlation matrices are thresholded and fused into a
single similarity matrix S by a patient-count-weighted average. S can be used
directly (``correlation`` mode) or turned into a signed Laplacian whose rows
express weighted pairwise differences (``laplacian`` mode).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, GraphMode, InputError, TaskDataset, _frozen_array


class ConstantFeatureWarning(UserWarning):
    """A feature column had zero variance; its correlations were set to 0."""


def pearson_matrix(design: np.ndarray) -> np.ndarray:
    """Sample Pearson correlation matrix of the columns of ``design``.

    Needs at least two rows. Constant columns have no defined correlation;
    their off-diagonal entries are set to 0 (diagonal stays 1) and a
    ConstantFeatureWarning naming the offending column indices is emitted.
    The result is exactly symmetric with unit diagonal.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"design must be 2-d, got shape {X.shape}")
    n, p = X.shape
    if n < 2:
        raise InputError("Pearson correlation needs at least 2 samples")

    Z = X - X.mean(axis=0)
    std = Z.std(axis=0, ddof=1)
    constant = np.flatnonzero(std == 0.0)
    if constant.size:
        warnings.warn(
            f"constant feature column(s) {constant.tolist()}: correlations set to 0",
            ConstantFeatureWarning,
            stacklevel=2,
        )
    denom = np.where(std == 0.0, 1.0, std)
    Z = Z / denom

    R = (Z.T @ Z) / (n - 1)
    np.clip(R, -1.0, 1.0, out=R)
    # mirror the upper triangle so symmetry is exact, not just within rounding
    upper = np.triu(R, k=1)
    R = upper + upper.T
    np.fill_diagonal(R, 1.0)
    if constant.size:
        R[constant, :] = 0.0
        R[:, constant] = 0.0
        R[constant, constant] = 1.0
    return R


def threshold(R: np.ndarray, tau: float) -> np.ndarray:
    """Zero every entry whose absolute value is strictly below tau.

    The inequality is strict, so an entry exactly equal to tau survives,
    and the unit diagonal survives any tau <= 1.
    """
    if not 0.0 <= tau <= 1.0:
        raise InputError("tau must lie in [0, 1]")
    R = np.asarray(R, dtype=float)
    out = R.copy()
    out[np.abs(R) < tau] = 0.0
    return out


@dataclass(frozen=True)
class CorrelationStack:
    """Thresholded per-timepoint correlation matrices, one per task."""

    matrices: tuple[np.ndarray, ...]
    tau: float

    def __post_init__(self):
        mats = tuple(_frozen_array(m) for m in self.matrices)
        object.__setattr__(self, "matrices", mats)
        if not mats:
            raise DimensionError("correlation stack is empty")
        p = mats[0].shape[0]
        for m in mats:
            if m.shape != (p, p):
                raise DimensionError("correlation matrices must share a square shape")

    @property
    def n_timepoints(self) -> int:
        return len(self.matrices)

    @property
    def n_features(self) -> int:
        return self.matrices[0].shape[0]


@dataclass(frozen=True)
class FusionGraph:
    """Fused feature-similarity matrix with its construction metadata."""

    S: np.ndarray
    tau: float
    weights: np.ndarray   # normalized patient-count weights, sum 1
    mode: GraphMode

    def __post_init__(self):
        object.__setattr__(self, "S", _frozen_array(self.S))
        object.__setattr__(self, "weights", _frozen_array(self.weights))
        object.__setattr__(self, "mode", GraphMode(self.mode))
        if self.S.ndim != 2 or self.S.shape[0] != self.S.shape[1]:
            raise DimensionError(f"S must be square, got shape {self.S.shape}")
        if not np.array_equal(self.S, self.S.T):
            raise InputError("S must be symmetric")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InputError("weights must be non-negative and sum to 1")

    @property
    def n_features(self) -> int:
        return self.S.shape[0]


def correlation_stack(data: TaskDataset, tau: float) -> CorrelationStack:
    """Thresholded Pearson matrices for every task of a dataset."""
    mats = tuple(threshold(pearson_matrix(task.design), tau) for task in data.tasks)
    return CorrelationStack(mats, tau)


def fuse(stack: CorrelationStack, patient_counts) -> FusionGraph:
    """Weighted average of the stack, weights proportional to patient counts."""
    counts = np.asarray(patient_counts, dtype=float)
    if counts.shape != (stack.n_timepoints,):
        raise DimensionError("one patient count per correlation matrix is required")
    if (counts <= 0).any():
        raise InputError("patient counts must be positive")
    total = counts.sum()
    weights = counts / total

    S = np.zeros((stack.n_features, stack.n_features))
    for w, R in zip(weights, stack.matrices):
        S = S + w * R
    return FusionGraph(S, stack.tau, weights, GraphMode.FUSED_CORRELATION)


def to_signed_laplacian(graph: FusionGraph) -> FusionGraph:
    """Signed-Laplacian transform of a fused correlation graph.

    Off-diagonal (m, l) becomes -S[m, l]; the input diagonal is discarded and
    replaced by the sum of absolute off-diagonal entries of the row. Row m of
    L @ W then equals sum_l |S[m, l]| * (w^m - sign(S[m, l]) * w^l).
    """
    if graph.mode is not GraphMode.FUSED_CORRELATION:
        raise InputError("input graph is already in laplacian mode")
    S = graph.S
    off = S - np.diag(np.diag(S))
    L = -off
    np.fill_diagonal(L, np.abs(off).sum(axis=1))
    return FusionGraph(L, graph.tau, graph.weights, GraphMode.SIGNED_LAPLACIAN)


def build_fusion_graph(
    data: TaskDataset, tau: float, mode: GraphMode = GraphMode.FUSED_CORRELATION
) -> FusionGraph:
    """Full pipeline: per-task correlations, thresholding, fusion, mode transform."""
    graph = fuse(correlation_stack(data, tau), data.patient_counts)
    if GraphMode(mode) is GraphMode.SIGNED_LAPLACIAN:
        graph = to_signed_laplacian(graph)
    return graph


def write_matrix_csv(path, matrix: np.ndarray, feature_names) -> None:
    """Write a dense feature-by-feature matrix as CSV with a name header.

    Values are formatted with repr so a round trip through the file is
    lossless.
    """
    matrix = np.asarray(matrix)
    names = [str(n) for n in feature_names]
    if matrix.shape != (len(names), len(names)):
        raise DimensionError("matrix shape does not match feature names")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature"] + names)
        for name, row in zip(names, matrix):
            writer.writerow([name] + [repr(float(v)) for v in row])


def write_stack_csv(directory, stack: CorrelationStack, feature_names, timepoint_labels) -> list:
    """Write each thresholded correlation matrix as correlation_<label>.csv."""
    import os

    if len(timepoint_labels) != stack.n_timepoints:
        raise DimensionError("one timepoint label per stack matrix is required")
    paths = []
    for label, matrix in zip(timepoint_labels, stack.matrices):
        path = os.path.join(str(directory), f"correlation_{label}.csv")
        write_matrix_csv(path, matrix, feature_names)
        paths.append(path)
    return paths
