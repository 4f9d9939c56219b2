import numpy as np
import pytest

from fusedmtl.core import TaskData, TaskDataset


def build_dataset(Xs, ys, feature_names=None, labels=None) -> TaskDataset:
    """Wrap raw per-task arrays into a TaskDataset with generated ids."""
    tasks = []
    for X, y in zip(Xs, ys):
        X = np.asarray(X, dtype=float)
        ids = tuple(f"P{r:04d}" for r in range(X.shape[0]))
        tasks.append(TaskData(X, np.asarray(y, dtype=float), ids))
    p = Xs[0].shape[1] if hasattr(Xs[0], "shape") else len(Xs[0][0])
    names = tuple(feature_names) if feature_names else tuple(f"f{j:03d}" for j in range(p))
    labs = tuple(labels) if labels else tuple(f"T{i}" for i in range(len(Xs)))
    return TaskDataset(tuple(tasks), names, labs)


def random_dataset(rng, p=6, t=3, n_lo=None, n_hi=40, noise=0.3):
    """Random well-conditioned instance: every task has more rows than features."""
    n_lo = n_lo or p + 5
    Xs, ys = [], []
    for _ in range(t):
        n = int(rng.integers(n_lo, max(n_lo + 1, n_hi)))
        X = rng.standard_normal((n, p))
        w = rng.standard_normal(p)
        ys.append(X @ w + noise * rng.standard_normal(n))
        Xs.append(X)
    return build_dataset(Xs, ys)


def random_similarity(rng, p):
    """Random symmetric matrix with unit diagonal, entries in [-1, 1]."""
    A = rng.uniform(-1.0, 1.0, (p, p))
    S = (A + A.T) / 2
    np.fill_diagonal(S, 1.0)
    return S


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
