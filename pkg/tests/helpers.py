"""Shared test utilities: exact discrete models and dataset builders."""

import numpy as np

from mdcp.data import MultiSourceData, PooledRows, SourceDataset, TaskKind


class FixedPmf:
    """Covariate-free classification model with a known exact pmf.

    Duck-types the ClassifierModel query surface (prob_matrix, density_rows,
    density_grid) so conformal/dual code can run against a distribution whose
    population quantities are computable in closed form.
    """

    def __init__(self, pmf):
        self.pmf = np.asarray(pmf, dtype=np.float64)
        assert abs(self.pmf.sum() - 1.0) < 1e-12

    @property
    def num_classes(self):
        return self.pmf.size

    def prob_matrix(self, X):
        return np.tile(self.pmf, (np.atleast_2d(X).shape[0], 1))

    def density_rows(self, X, y):
        return self.pmf[np.asarray(y, dtype=np.int64)]

    def density_grid(self, X, ys=None):
        ys = np.arange(self.pmf.size) if ys is None else np.asarray(ys)
        return np.tile(self.pmf[ys.astype(np.int64)],
                       (np.atleast_2d(X).shape[0], 1))


def pooled_from_pmfs(pmfs, weights, n, seed):
    """Draw n pooled rows from the source mixture of FixedPmf instances."""
    pmfs = [np.asarray(p, dtype=np.float64) for p in pmfs]
    weights = np.asarray(weights, dtype=np.float64)
    rng = np.random.default_rng(seed)
    src = rng.choice(len(pmfs), size=n, p=weights / weights.sum())
    y = np.empty(n, dtype=np.float64)
    for k, pmf in enumerate(pmfs):
        rows = np.flatnonzero(src == k)
        y[rows] = rng.choice(pmf.size, size=rows.size, p=pmf)
    X = rng.standard_normal((n, 1))
    task = TaskKind.classification(int(max(p.size for p in pmfs)))
    return PooledRows(features=X, labels=y.astype(np.float64),
                      source_ids=src.astype(np.int64),
                      row_ids=np.arange(n, dtype=np.int64), task=task,
                      weights=weights / weights.sum())


def multisource_from_pmfs(pmfs, n_per_source, seed):
    """Per-source iid label draws from fixed pmfs; features are noise."""
    rng = np.random.default_rng(seed)
    C = int(max(np.asarray(p).size for p in pmfs))
    task = TaskKind.classification(C)
    sources = []
    for k, pmf in enumerate(pmfs):
        pmf = np.asarray(pmf, dtype=np.float64)
        y = rng.choice(pmf.size, size=n_per_source, p=pmf)
        X = rng.standard_normal((n_per_source, 1))
        sources.append(SourceDataset(source_id=k, features=X,
                                     labels=y.astype(np.uint32), task=task))
    return MultiSourceData(sources=tuple(sources), task=task)


def toy_multisource(K=2, n=30, d=2, seed=0, task=None):
    """Small generic regression-style dataset for structural tests."""
    rng = np.random.default_rng(seed)
    task = task or TaskKind.regression()
    sources = []
    for k in range(K):
        X = rng.standard_normal((n, d))
        if task.is_classification:
            y = rng.integers(0, task.num_classes, size=n).astype(np.uint32)
        else:
            y = rng.standard_normal(n)
        sources.append(SourceDataset(source_id=k, features=X, labels=y,
                                     task=task))
    return MultiSourceData(sources=tuple(sources), task=task)
