"""Shared domain types, the penalized objective, and the temporal difference operator.

Every other module builds on the types defined here. All types are immutable
value objects after construction (arrays are frozen), so they are safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .similarity import FusionGraph


class DimensionError(ValueError):
    """Shapes or sizes of inputs are inconsistent."""


class InputError(ValueError):
    """User-supplied data or configuration is invalid."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class GraphMode(str, Enum):
    """How the feature-similarity matrix enters the graph penalty.

    ``correlation`` uses the fused correlation matrix as produced by the
    weighted per-timepoint fusion; ``laplacian`` applies the signed-Laplacian
    transform so the penalty becomes a sum of weighted pairwise row
    differences.
    """

    FUSED_CORRELATION = "correlation"
    SIGNED_LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class TaskData:
    """One task: the design matrix and target vector for a single timepoint."""

    design: np.ndarray        # (n, p)
    target: np.ndarray        # (n,)
    patient_ids: tuple[str, ...]

    def __post_init__(self):
        design = _frozen_array(self.design)
        target = _frozen_array(self.target)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "patient_ids", tuple(str(p) for p in self.patient_ids))
        if design.ndim != 2:
            raise DimensionError(f"design must be 2-d, got shape {design.shape}")
        if target.shape != (design.shape[0],):
            raise DimensionError(
                f"target length {target.shape} does not match design rows {design.shape[0]}"
            )
        if len(self.patient_ids) != design.shape[0]:
            raise DimensionError("one patient id per design row is required")
        if not np.isfinite(design).all() or not np.isfinite(target).all():
            raise InputError("non-finite values in task data")

    @property
    def n_samples(self) -> int:
        return self.design.shape[0]


@dataclass(frozen=True)
class TaskDataset:
    """Per-timepoint design matrices and targets for all tasks.

    Invariants enforced here: a common feature count p >= 1 across tasks,
    t >= 2 tasks, and at least two samples per task (sample correlations and
    the temporal penalty are undefined below that).
    """

    tasks: tuple[TaskData, ...]
    feature_names: tuple[str, ...]
    timepoint_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "feature_names", tuple(str(f) for f in self.feature_names))
        object.__setattr__(self, "timepoint_labels", tuple(str(l) for l in self.timepoint_labels))
        if len(self.tasks) < 2:
            raise DimensionError("at least two tasks are required")
        if len(self.timepoint_labels) != len(self.tasks):
            raise DimensionError("one timepoint label per task is required")
        p = len(self.feature_names)
        if p < 1:
            raise DimensionError("at least one feature is required")
        for label, task in zip(self.timepoint_labels, self.tasks):
            if task.design.shape[1] != p:
                raise DimensionError(
                    f"task {label!r} has {task.design.shape[1]} feature columns, expected {p}"
                )
            if task.n_samples < 2:
                raise InputError(f"task {label!r} has fewer than 2 samples")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def patient_counts(self) -> np.ndarray:
        return np.array([task.n_samples for task in self.tasks])

    def patient_id_set(self) -> tuple[str, ...]:
        """All distinct patient ids, sorted, across every task."""
        ids = set()
        for task in self.tasks:
            ids.update(task.patient_ids)
        return tuple(sorted(ids))

    def subset_patients(self, keep: set[str] | frozenset[str]) -> "TaskDataset":
        """Restrict every task to rows belonging to the given patients.

        Row order within each task is preserved. Raises InputError if any
        task would be left with fewer than 2 rows.
        """
        tasks = []
        for label, task in zip(self.timepoint_labels, self.tasks):
            mask = np.array([pid in keep for pid in task.patient_ids], dtype=bool)
            if int(mask.sum()) < 2:
                raise InputError(
                    f"patient subset leaves task {label!r} with fewer than 2 samples"
                )
            kept_ids = tuple(pid for pid in task.patient_ids if pid in keep)
            tasks.append(TaskData(task.design[mask], task.target[mask], kept_ids))
        return TaskDataset(tuple(tasks), self.feature_names, self.timepoint_labels)

    def permute_features(self, order) -> "TaskDataset":
        """Reorder feature columns; used by equivariance checks."""
        order = np.asarray(order, dtype=int)
        if sorted(order.tolist()) != list(range(self.n_features)):
            raise DimensionError("order must be a permutation of feature indices")
        tasks = tuple(
            TaskData(task.design[:, order], task.target, task.patient_ids)
            for task in self.tasks
        )
        names = tuple(self.feature_names[i] for i in order)
        return TaskDataset(tasks, names, self.timepoint_labels)


@dataclass(frozen=True)
class WeightMatrix:
    """Coefficient matrix with one column per task."""

    values: np.ndarray  # (p, t)

    def __post_init__(self):
        values = _frozen_array(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise DimensionError(f"weights must be 2-d, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise InputError("non-finite weight entries")

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.values.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weights and graph construction settings.

    lambda1 scales the elementwise l1 penalty, lambda2 the graph penalty
    on S @ W, lambda3 the temporal penalty on W @ H. tau is the absolute
    correlation threshold used when building the graph, rho the augmented
    Lagrangian parameter.
    """

    lambda1: float
    lambda2: float
    lambda3: float
    tau: float = 0.5
    rho: float = 1.0
    graph_mode: GraphMode = GraphMode.FUSED_CORRELATION

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise InputError("tau must lie in [0, 1]")
        if self.rho <= 0:
            raise InputError("rho must be positive")
        object.__setattr__(self, "graph_mode", GraphMode(self.graph_mode))

    def replace(self, **kwargs) -> "PenaltyConfig":
        from dataclasses import replace as _replace

        return _replace(self, **kwargs)


@dataclass(frozen=True)
class TemporalDifferenceOperator:
    """Forward-difference operator H of shape (t, t-1).

    For any weight matrix W, column j of W @ H equals w_j - w_{j+1}, so the
    l1 norm of W @ H penalizes change between adjacent timepoints.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    def apply(self, W: np.ndarray) -> np.ndarray:
        """Adjacent-column differences of W, shape (p, t-1)."""
        return W @ self.values

    def gram(self) -> np.ndarray:
        """H @ H.T, the (t, t) coupling matrix of the temporal penalty."""
        return self.values @ self.values.T


def build_temporal_operator(t: int) -> TemporalDifferenceOperator:
    """Build the t x (t-1) forward-difference operator.

    Entry (i, j) is +1 when i == j, -1 when i == j+1, and 0 otherwise;
    t must be at least 2.
    """
    if t < 2:
        raise DimensionError(f"temporal operator needs t >= 2, got t={t}")
    H = np.zeros((t, t - 1))
    idx = np.arange(t - 1)
    H[idx, idx] = 1.0
    H[idx + 1, idx] = -1.0
    return TemporalDifferenceOperator(H)


@dataclass(frozen=True)
class ObjectiveTerms:
    """The four summands of the penalized objective, separately retrievable."""

    loss: float
    sparsity: float
    graph: float
    temporal: float

    @property
    def total(self) -> float:
        return self.loss + self.sparsity + self.graph + self.temporal

    def as_dict(self) -> dict[str, float]:
        return {
            "loss": self.loss,
            "sparsity": self.sparsity,
            "graph": self.graph,
            "temporal": self.temporal,
            "objective": self.total,
        }


def _graph_matrix(graph) -> np.ndarray | None:
    if graph is None:
        return None
    return getattr(graph, "S", graph)


def squared_loss(W: np.ndarray, data: TaskDataset) -> float:
    """0.5 * sum over tasks of the squared residual norm."""
    total = 0.0
    for i, task in enumerate(data.tasks):
        r = task.design @ W[:, i] - task.target
        total += 0.5 * float(r @ r)
    return total


def predict_tasks(W: WeightMatrix | np.ndarray, data: TaskDataset) -> list[np.ndarray]:
    """Per-task predictions X_i @ w_i for every task in the dataset."""
    Wv = W.values if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    if Wv.shape != (data.n_features, data.n_tasks):
        raise DimensionError(
            f"weights shape {Wv.shape} does not match data ({data.n_features}, {data.n_tasks})"
        )
    return [task.design @ Wv[:, i] for i, task in enumerate(data.tasks)]


def squared_loss_gradient(W: np.ndarray, data: TaskDataset) -> np.ndarray:
    """Gradient of the smooth loss; column i is X_i^T (X_i w_i - y_i)."""
    grad = np.empty_like(W)
    for i, task in enumerate(data.tasks):
        grad[:, i] = task.design.T @ (task.design @ W[:, i] - task.target)
    return grad


def objective_terms(
    W: WeightMatrix | np.ndarray,
    data: TaskDataset,
    graph: "FusionGraph | np.ndarray | None",
    H: TemporalDifferenceOperator,
    cfg: PenaltyConfig,
) -> ObjectiveTerms:
    """Evaluate the objective, returning all four summands.

    The loss is accumulated per task; the graph term needs a similarity
    matrix unless lambda2 is zero.
    """
    Wv = W.values if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    if Wv.shape != (data.n_features, data.n_tasks):
        raise DimensionError(
            f"weights shape {Wv.shape} does not match data ({data.n_features}, {data.n_tasks})"
        )
    if H.n_tasks != data.n_tasks:
        raise DimensionError("temporal operator size does not match task count")

    loss = squared_loss(Wv, data)
    sparsity = cfg.lambda1 * float(np.abs(Wv).sum())
    S = _graph_matrix(graph)
    if cfg.lambda2 > 0:
        if S is None:
            raise InputError("a similarity matrix is required when lambda2 > 0")
        if S.shape != (data.n_features, data.n_features):
            raise DimensionError(f"similarity matrix shape {S.shape} does not match p")
        graph_term = cfg.lambda2 * float(np.abs(S @ Wv).sum())
    else:
        graph_term = 0.0
    temporal = cfg.lambda3 * float(np.abs(H.apply(Wv)).sum())

    terms = ObjectiveTerms(loss, sparsity, graph_term, temporal)
    if not np.isfinite(terms.total):
        raise ArithmeticError("objective evaluated to a non-finite value")
    return terms


def objective_value(
    W: WeightMatrix | np.ndarray,
    data: TaskDataset,
    graph: "FusionGraph | np.ndarray | None",
    H: TemporalDifferenceOperator,
    cfg: PenaltyConfig,
) -> float:
    """Total objective value; see objective_terms for the breakdown."""
    return objective_terms(W, data, graph, H, cfg).total
