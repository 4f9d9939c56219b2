"""Longitudinal CSV ingestion, preprocessing, and synthetic cohort generation.

The CSV schema is one row per (patient, timepoint):

    patient_id,timepoint,<feature names...>,target

Empty cells are missing values. Preprocessing drops rows without a target,
imputes missing features with the per-timepoint mean, and z-scores each
feature per timepoint; the fitted means/stds are returned so test data can
be transformed identically.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, InputError, TaskData, TaskDataset, _frozen_array
from .similarity import ConstantFeatureWarning

DEFAULT_TIMEPOINTS = ("M00", "M06", "M12", "M24", "M36", "M48")
ID_COLUMN = "patient_id"
TIMEPOINT_COLUMN = "timepoint"
TARGET_COLUMN = "target"


@dataclass(frozen=True)
class LongitudinalTable:
    """Raw longitudinal rows; missing cells are NaN, targets may be missing."""

    patient_ids: tuple[str, ...]
    timepoints: tuple[str, ...]       # per-row timepoint label
    features: np.ndarray              # (n_rows, p), NaN marks missing
    targets: np.ndarray               # (n_rows,), NaN marks missing
    feature_names: tuple[str, ...]
    timepoint_labels: tuple[str, ...]  # the declared ordered label set

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features))
        object.__setattr__(self, "targets", _frozen_array(self.targets))
        n = len(self.patient_ids)
        if len(self.timepoints) != n or self.features.shape[0] != n or self.targets.shape[0] != n:
            raise DimensionError("table columns have inconsistent row counts")
        if self.features.shape[1] != len(self.feature_names):
            raise DimensionError("feature matrix width does not match feature names")
        known = set(self.timepoint_labels)
        seen = set()
        for pid, tp in zip(self.patient_ids, self.timepoints):
            if tp not in known:
                raise InputError(f"unknown timepoint label {tp!r} for patient {pid!r}")
            key = (pid, tp)
            if key in seen:
                raise InputError(f"duplicate (patient, timepoint) row: {key}")
            seen.add(key)

    @property
    def n_rows(self) -> int:
        return len(self.patient_ids)

    def rows_at(self, label: str) -> np.ndarray:
        return np.array([tp == label for tp in self.timepoints], dtype=bool)


def _parse_cell(value: str, where: str) -> float:
    value = value.strip()
    if value == "":
        return np.nan
    try:
        return float(value)
    except ValueError:
        raise InputError(f"non-numeric value {value!r} at {where}")


def load_csv(path, timepoint_labels=DEFAULT_TIMEPOINTS) -> LongitudinalTable:
    """Read a longitudinal CSV; missing cells are flagged, never imputed here."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file")
        if len(header) < 4 or header[0] != ID_COLUMN or header[1] != TIMEPOINT_COLUMN:
            raise InputError(
                f"{path}: header must start with '{ID_COLUMN},{TIMEPOINT_COLUMN}'"
            )
        if header[-1] != TARGET_COLUMN:
            raise InputError(f"{path}: last column must be '{TARGET_COLUMN}'")
        feature_names = tuple(header[2:-1])

        ids, tps, feats, targets = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            ids.append(row[0])
            tps.append(row[1])
            feats.append(
                [_parse_cell(c, f"{path}:{lineno} column {name}")
                 for c, name in zip(row[2:-1], feature_names)]
            )
            targets.append(_parse_cell(row[-1], f"{path}:{lineno} column {TARGET_COLUMN}"))

    if not ids:
        raise InputError(f"{path}: no data rows")
    return LongitudinalTable(
        patient_ids=tuple(ids),
        timepoints=tuple(tps),
        features=np.array(feats, dtype=float),
        targets=np.array(targets, dtype=float),
        feature_names=feature_names,
        timepoint_labels=tuple(timepoint_labels),
    )


def _format(value: float) -> str:
    return "" if np.isnan(value) else repr(float(value))


def write_table_csv(table: LongitudinalTable, path) -> None:
    """Write a table back to the CSV schema; full-precision round trip."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([ID_COLUMN, TIMEPOINT_COLUMN, *table.feature_names, TARGET_COLUMN])
        for i in range(table.n_rows):
            writer.writerow(
                [table.patient_ids[i], table.timepoints[i]]
                + [_format(v) for v in table.features[i]]
                + [_format(table.targets[i])]
            )


@dataclass(frozen=True)
class PreprocessParams:
    """Per-timepoint imputation and scaling parameters fitted on training data.

    Where a training feature was constant (std 0), transformed values are
    centered but not scaled.
    """

    timepoint_labels: tuple[str, ...]
    feature_names: tuple[str, ...]
    impute_means: np.ndarray  # (t, p)
    scale_means: np.ndarray   # (t, p)
    scale_stds: np.ndarray    # (t, p), 0 where the feature was constant

    def __post_init__(self):
        for name in ("impute_means", "scale_means", "scale_stds"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    def to_dict(self) -> dict:
        return {
            "timepoint_labels": list(self.timepoint_labels),
            "feature_names": list(self.feature_names),
            "impute_means": self.impute_means.tolist(),
            "scale_means": self.scale_means.tolist(),
            "scale_stds": self.scale_stds.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessParams":
        return cls(
            timepoint_labels=tuple(d["timepoint_labels"]),
            feature_names=tuple(d["feature_names"]),
            impute_means=np.array(d["impute_means"], dtype=float),
            scale_means=np.array(d["scale_means"], dtype=float),
            scale_stds=np.array(d["scale_stds"], dtype=float),
        )


def _impute_columns(X: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    """Fill NaNs with per-column means; all-missing columns become 0."""
    X = X.copy()
    means = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j]
        observed = ~np.isnan(col)
        if not observed.any():
            warnings.warn(
                f"feature column {j} entirely missing at {label}; imputing 0",
                ConstantFeatureWarning,
                stacklevel=3,
            )
            col[:] = 0.0
            continue
        means[j] = col[observed].mean()
        col[~observed] = means[j]
    return X, means


def preprocess(table: LongitudinalTable) -> tuple[TaskDataset, PreprocessParams]:
    """Fit-and-transform: drop target-missing rows, impute, z-score per timepoint.

    Rows lacking a target at a timepoint are dropped from that task only, so
    imputation means are computed over the rows that actually train. Returns
    the dataset together with the fitted parameters for reuse on test data.
    """
    labels = [l for l in table.timepoint_labels if table.rows_at(l).any()]
    if len(labels) < 2:
        raise InputError("at least two timepoints with data are required")

    tasks = []
    impute_means, scale_means, scale_stds = [], [], []
    for label in labels:
        mask = table.rows_at(label) & ~np.isnan(table.targets)
        if int(mask.sum()) < 2:
            raise InputError(
                f"timepoint {label!r} has fewer than 2 rows with a target"
            )
        X = table.features[mask]
        y = table.targets[mask]
        ids = tuple(pid for pid, m in zip(table.patient_ids, mask) if m)

        X, means_imp = _impute_columns(X, label)
        mean = X.mean(axis=0)
        std = X.std(axis=0, ddof=1)
        constant = np.flatnonzero(std == 0.0)
        if constant.size:
            warnings.warn(
                f"constant feature column(s) {constant.tolist()} at {label}; left at 0",
                ConstantFeatureWarning,
                stacklevel=2,
            )
        Z = (X - mean) / np.where(std == 0.0, 1.0, std)

        tasks.append(TaskData(Z, y, ids))
        impute_means.append(means_imp)
        scale_means.append(mean)
        scale_stds.append(std)

    params = PreprocessParams(
        timepoint_labels=tuple(labels),
        feature_names=table.feature_names,
        impute_means=np.array(impute_means),
        scale_means=np.array(scale_means),
        scale_stds=np.array(scale_stds),
    )
    dataset = TaskDataset(tuple(tasks), table.feature_names, tuple(labels))
    return dataset, params


def _check_features(table: LongitudinalTable, params: PreprocessParams) -> None:
    if table.feature_names != params.feature_names:
        raise InputError(
            "feature names do not match the fitted parameters: "
            f"{list(table.feature_names)[:5]}... vs {list(params.feature_names)[:5]}..."
        )


def transform_features(
    table: LongitudinalTable, params: PreprocessParams
) -> list[tuple[str, tuple[str, ...], np.ndarray]]:
    """Apply fitted imputation/scaling to every row, targets not required.

    Returns (timepoint label, patient ids, transformed design) triples for
    each fitted timepoint present in the table, in fitted order.
    """
    _check_features(table, params)
    out = []
    for k, label in enumerate(params.timepoint_labels):
        mask = table.rows_at(label)
        if not mask.any():
            continue
        X = table.features[mask].copy()
        missing = np.isnan(X)
        X[missing] = np.broadcast_to(params.impute_means[k], X.shape)[missing]
        std = params.scale_stds[k]
        Z = (X - params.scale_means[k]) / np.where(std == 0.0, 1.0, std)
        ids = tuple(pid for pid, m in zip(table.patient_ids, mask) if m)
        out.append((label, ids, Z))
    if not out:
        raise InputError("no fitted timepoints present in the table")
    return out


def apply_preprocessing(table: LongitudinalTable, params: PreprocessParams) -> TaskDataset:
    """Transform labeled data with train-fitted parameters (never refit)."""
    _check_features(table, params)
    tasks, labels = [], []
    for k, label in enumerate(params.timepoint_labels):
        mask = table.rows_at(label) & ~np.isnan(table.targets)
        if not mask.any():
            continue
        X = table.features[mask].copy()
        missing = np.isnan(X)
        X[missing] = np.broadcast_to(params.impute_means[k], X.shape)[missing]
        std = params.scale_stds[k]
        Z = (X - params.scale_means[k]) / np.where(std == 0.0, 1.0, std)
        y = table.targets[mask]
        ids = tuple(pid for pid, m in zip(table.patient_ids, mask) if m)
        tasks.append(TaskData(Z, y, ids))
        labels.append(label)
    return TaskDataset(tuple(tasks), params.feature_names, tuple(labels))


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic longitudinal cohort with known true weights.

    Features are standard normal with equicorrelated blocks (pairwise
    correlation block_rho inside each block). True weights put signal on the
    first n_signal_features features, equal within a correlation block, and
    drift slowly across timepoints. Dropout keeps a seeded random subset of
    patients at each timepoint, drawn independently per timepoint since real
    cohort sizes need not shrink monotonically.
    """

    n_patients: int
    n_features: int
    n_timepoints: int
    noise_sigma: float = 0.1
    dropout_schedule: tuple[float, ...] | None = None
    correlation_blocks: tuple[tuple[int, ...], ...] = ()
    block_rho: float = 0.8
    n_signal_features: int | None = None
    signal_scale: float = 1.0
    temporal_drift: float = 0.1
    true_weights: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 2 or self.n_features < 1 or self.n_timepoints < 2:
            raise InputError("need n_patients >= 2, n_features >= 1, n_timepoints >= 2")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be non-negative")
        if not 0.0 <= self.block_rho < 1.0:
            raise InputError("block_rho must lie in [0, 1)")
        schedule = self.dropout_schedule
        if schedule is None:
            schedule = (1.0,) * self.n_timepoints
        schedule = tuple(float(f) for f in schedule)
        if len(schedule) != self.n_timepoints:
            raise DimensionError("dropout_schedule needs one fraction per timepoint")
        if any(not 0.0 < f <= 1.0 for f in schedule):
            raise InputError("retention fractions must lie in (0, 1]")
        object.__setattr__(self, "dropout_schedule", schedule)
        seen = set()
        for block in self.correlation_blocks:
            for j in block:
                if not 0 <= j < self.n_features:
                    raise InputError(f"block feature index {j} out of range")
                if j in seen:
                    raise InputError(f"feature {j} appears in two blocks")
                seen.add(j)
        if self.true_weights is not None:
            tw = np.asarray(self.true_weights, dtype=float)
            if tw.shape != (self.n_features, self.n_timepoints):
                raise DimensionError("true_weights shape must be (p, t)")
            object.__setattr__(self, "true_weights", _frozen_array(tw))

    @property
    def n_per_task(self) -> tuple[int, ...]:
        return tuple(
            int(round(self.n_patients * f)) for f in self.dropout_schedule
        )


def _make_true_weights(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.true_weights is not None:
        return np.array(spec.true_weights)
    p, t = spec.n_features, spec.n_timepoints
    n_signal = spec.n_signal_features
    if n_signal is None:
        n_signal = max(1, p // 3)
    if n_signal > p:
        raise InputError("n_signal_features exceeds the feature count")
    signal = set(range(n_signal))

    # groups of features constrained to share a weight trajectory
    groups: list[list[int]] = []
    grouped = set()
    for block in spec.correlation_blocks:
        members = [j for j in block if j in signal]
        if members:
            groups.append(members)
            grouped.update(members)
    groups.extend([j] for j in sorted(signal - grouped))

    W = np.zeros((p, t))
    for members in groups:
        base = spec.signal_scale * rng.choice([-1.0, 1.0]) * rng.uniform(0.75, 1.25)
        drift = spec.temporal_drift * spec.signal_scale * rng.standard_normal(t - 1)
        traj = base + np.concatenate([[0.0], np.cumsum(drift)])
        for j in members:
            W[j] = traj
    return W


def generate_synthetic(spec: SyntheticSpec) -> tuple[TaskDataset, np.ndarray]:
    """Draw a cohort from the spec; bit-reproducible for a fixed seed."""
    rng = np.random.default_rng(spec.seed)
    p, t, n = spec.n_features, spec.n_timepoints, spec.n_patients
    true_W = _make_true_weights(spec, rng)

    if t <= len(DEFAULT_TIMEPOINTS):
        labels = DEFAULT_TIMEPOINTS[:t]
    else:
        labels = tuple(f"T{i:02d}" for i in range(t))
    all_ids = [f"P{i:05d}" for i in range(n)]

    in_block = {j for block in spec.correlation_blocks for j in block}
    sr = np.sqrt(spec.block_rho)
    se = np.sqrt(1.0 - spec.block_rho)

    tasks = []
    for k in range(t):
        X = rng.standard_normal((n, p))
        for block in spec.correlation_blocks:
            g = rng.standard_normal(n)
            for j in block:
                X[:, j] = sr * g + se * X[:, j]
        noise = rng.standard_normal(n)
        y = X @ true_W[:, k] + spec.noise_sigma * noise

        n_k = spec.n_per_task[k]
        if n_k < 2:
            raise InputError(f"dropout leaves timepoint {labels[k]} with fewer than 2 patients")
        keep = np.sort(rng.permutation(n)[:n_k])
        tasks.append(
            TaskData(X[keep], y[keep], tuple(all_ids[i] for i in keep))
        )

    names = tuple(f"f{j + 1:03d}" for j in range(p))
    return TaskDataset(tuple(tasks), names, labels), true_W


def dataset_to_table(data: TaskDataset) -> LongitudinalTable:
    """Flatten a dataset into the CSV row schema (one row per patient-timepoint)."""
    ids, tps, feats, targets = [], [], [], []
    for label, task in zip(data.timepoint_labels, data.tasks):
        for r, pid in enumerate(task.patient_ids):
            ids.append(pid)
            tps.append(label)
            feats.append(task.design[r])
            targets.append(task.target[r])
    return LongitudinalTable(
        patient_ids=tuple(ids),
        timepoints=tuple(tps),
        features=np.array(feats, dtype=float),
        targets=np.array(targets, dtype=float),
        feature_names=data.feature_names,
        timepoint_labels=data.timepoint_labels,
    )


def write_weights_csv(path, weights: np.ndarray, feature_names, timepoint_labels) -> None:
    """Write a (p, t) weight matrix as CSV with labeled rows and columns."""
    weights = np.asarray(weights)
    if weights.shape != (len(feature_names), len(timepoint_labels)):
        raise DimensionError("weights shape does not match the labels")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", *timepoint_labels])
        for name, row in zip(feature_names, weights):
            writer.writerow([name] + [repr(float(v)) for v in row])


def read_weights_csv(path) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...]]:
    """Inverse of write_weights_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        labels = tuple(header[1:])
        names, rows = [], []
        for row in reader:
            names.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return np.array(rows, dtype=float), tuple(names), labels
