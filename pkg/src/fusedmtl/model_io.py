"""Versioned JSON model files.

A model file bundles everything needed to predict on new data: the weight
matrices, the fitted preprocessing parameters, the similarity graph, and the
penalty configuration, under an explicit schema version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import GraphMode, InputError, PenaltyConfig, WeightMatrix
from .data import PreprocessParams
from .similarity import FusionGraph

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Model:
    """A trained model as stored on disk."""

    weights: WeightMatrix
    sparse_weights: WeightMatrix
    feature_names: tuple[str, ...]
    timepoint_labels: tuple[str, ...]
    config: PenaltyConfig
    preprocess: PreprocessParams | None
    graph: FusionGraph | None
    solver_info: dict


def save_model(
    path,
    weights: WeightMatrix,
    sparse_weights: WeightMatrix,
    feature_names,
    timepoint_labels,
    config: PenaltyConfig,
    preprocess: PreprocessParams | None,
    graph: FusionGraph | None,
    solver_info: dict,
) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "feature_names": [str(f) for f in feature_names],
        "timepoint_labels": [str(l) for l in timepoint_labels],
        "weights": weights.values.tolist(),
        "sparse_weights": sparse_weights.values.tolist(),
        "penalty": {
            "lambda1": config.lambda1,
            "lambda2": config.lambda2,
            "lambda3": config.lambda3,
            "tau": config.tau,
            "rho": config.rho,
            "graph_mode": config.graph_mode.value,
        },
        "preprocess": preprocess.to_dict() if preprocess is not None else None,
        "graph": None
        if graph is None
        else {
            "S": graph.S.tolist(),
            "tau": graph.tau,
            "weights": graph.weights.tolist(),
            "mode": graph.mode.value,
        },
        "solver": solver_info,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> Model:
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(f"unsupported model schema version {version!r}")
    pen = payload["penalty"]
    config = PenaltyConfig(
        lambda1=pen["lambda1"],
        lambda2=pen["lambda2"],
        lambda3=pen["lambda3"],
        tau=pen["tau"],
        rho=pen["rho"],
        graph_mode=GraphMode(pen["graph_mode"]),
    )
    graph = None
    if payload["graph"] is not None:
        g = payload["graph"]
        graph = FusionGraph(
            S=np.array(g["S"], dtype=float),
            tau=g["tau"],
            weights=np.array(g["weights"], dtype=float),
            mode=GraphMode(g["mode"]),
        )
    preprocess = (
        PreprocessParams.from_dict(payload["preprocess"])
        if payload["preprocess"] is not None
        else None
    )
    return Model(
        weights=WeightMatrix(np.array(payload["weights"], dtype=float)),
        sparse_weights=WeightMatrix(np.array(payload["sparse_weights"], dtype=float)),
        feature_names=tuple(payload["feature_names"]),
        timepoint_labels=tuple(payload["timepoint_labels"]),
        config=config,
        preprocess=preprocess,
        graph=graph,
        solver_info=dict(payload["solver"]),
    )
