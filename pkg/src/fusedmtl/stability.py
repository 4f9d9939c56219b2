"""Longitudinal stability selection.

Repeatedly refits the model on patient-level subsamples and records, per
feature and per timepoint, how often the coefficient is selected (nonzero).
Selection is read from the solver's soft-thresholded block, which is exactly
sparse, rather than from the loss-carrying block, whose entries are only
near zero.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import InputError, PenaltyConfig, TaskDataset, _frozen_array
from .similarity import build_fusion_graph
from .solver import SolverOptions, solve

ZERO_TOLERANCE = 1e-8


@dataclass(frozen=True)
class StabilityResult:
    """Empirical selection probabilities and the stable feature set."""

    selection_probability: np.ndarray   # (p, t), multiples of 1/(runs * n_configs)
    runs: int
    subsample_fraction: float
    lambda_path: tuple[PenaltyConfig, ...]
    pi: float
    stable_features: tuple[int, ...]    # max-over-time probability >= pi

    def __post_init__(self):
        probs = _frozen_array(self.selection_probability)
        object.__setattr__(self, "selection_probability", probs)
        if ((probs < 0) | (probs > 1)).any():
            raise InputError("selection probabilities must lie in [0, 1]")
        expected = tuple(
            int(j) for j in np.flatnonzero(probs.max(axis=1) >= self.pi)
        )
        if tuple(self.stable_features) != expected:
            raise InputError("stable_features inconsistent with the pi threshold")

    def to_csv(self, path, feature_names, timepoint_labels) -> None:
        probs = self.selection_probability
        if probs.shape != (len(feature_names), len(timepoint_labels)):
            raise InputError("probability matrix shape does not match the labels")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", *timepoint_labels])
            for name, row in zip(feature_names, probs):
                writer.writerow([name] + [repr(float(v)) for v in row])

    def stable_to_json(self, path, feature_names) -> None:
        payload = {
            "pi": self.pi,
            "runs": self.runs,
            "subsample_fraction": self.subsample_fraction,
            "stable_features": [
                {
                    "index": j,
                    "name": str(feature_names[j]),
                    "max_probability": float(self.selection_probability[j].max()),
                }
                for j in self.stable_features
            ],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _run_once(
    data: TaskDataset,
    cfgs: tuple[PenaltyConfig, ...],
    fraction: float,
    opts: SolverOptions,
    zero_tol: float,
    seed_seq: np.random.SeedSequence,
) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    patients = np.array(data.patient_id_set())
    n_sub = int(np.floor(len(patients) * fraction))
    if n_sub < 2:
        raise InputError("subsample fraction leaves fewer than 2 patients")
    keep = set(patients[rng.permutation(len(patients))[:n_sub]])
    sub = data.subset_patients(keep)  # raises if any task drops below 2 rows

    counts = np.zeros((data.n_features, data.n_tasks))
    for cfg in cfgs:
        graph = (
            build_fusion_graph(sub, cfg.tau, cfg.graph_mode) if cfg.lambda2 > 0 else None
        )
        result = solve(sub, graph, cfg, opts)
        counts += np.abs(result.sparse_weights.values) > zero_tol
    return counts


def stability_select(
    data: TaskDataset,
    cfg: PenaltyConfig | tuple[PenaltyConfig, ...] | list[PenaltyConfig],
    runs: int = 100,
    fraction: float = 0.5,
    pi: float = 0.8,
    seed: int = 0,
    opts: SolverOptions = SolverOptions(),
    zero_tol: float = ZERO_TOLERANCE,
    threads: int = 1,
) -> StabilityResult:
    """Estimate per-feature, per-timepoint selection probabilities.

    Each of the ``runs`` draws is a patient-level subsample (without
    replacement) of the given fraction; the similarity graph is rebuilt from
    the subsample before solving. Passing a sequence of configs aggregates
    over the path, making probabilities multiples of 1/(runs * len(path)).
    Deterministic for a fixed seed regardless of the thread count.
    """
    if runs < 1:
        raise InputError("runs must be at least 1")
    if not 0.0 < fraction < 1.0:
        raise InputError("fraction must lie strictly between 0 and 1")
    if not 0.0 < pi <= 1.0:
        raise InputError("pi must lie in (0, 1]")
    cfgs = (cfg,) if isinstance(cfg, PenaltyConfig) else tuple(cfg)
    if not cfgs:
        raise InputError("at least one penalty configuration is required")

    seeds = np.random.SeedSequence(seed).spawn(runs)

    def job(seq):
        return _run_once(data, cfgs, fraction, opts, zero_tol, seq)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_counts = list(pool.map(job, seeds))
    else:
        all_counts = [job(seq) for seq in seeds]

    probs = np.sum(all_counts, axis=0) / (runs * len(cfgs))
    stable = tuple(int(j) for j in np.flatnonzero(probs.max(axis=1) >= pi))
    return StabilityResult(
        selection_probability=probs,
        runs=runs,
        subsample_fraction=fraction,
        lambda_path=cfgs,
        pi=pi,
        stable_features=stable,
    )
