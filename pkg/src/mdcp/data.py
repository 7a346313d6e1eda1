"""Multi-source data model: typed datasets, deterministic splits, CSV I/O.

Labels are stored as float64 for regression and uint32 class indices for
classification so tie checks on classes are exact. All containers are frozen
and their arrays are marked read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    BadFractions,
    ClassOutOfRange,
    EmptySource,
    NonFinite,
    TooFewSamples,
    UnknownSource,
)
from .rng import TAG_SPLIT, stream


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TaskKind:
    """Label-space type: classification with C classes, or regression."""

    kind: str  # "classification" | "regression"
    num_classes: int | None = None

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification":
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError("classification needs num_classes >= 2")
        elif self.num_classes is not None:
            raise ValueError("regression takes no num_classes")

    @classmethod
    def classification(cls, num_classes: int) -> "TaskKind":
        return cls("classification", int(num_classes))

    @classmethod
    def regression(cls) -> "TaskKind":
        return cls("regression")

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"


@dataclass(frozen=True)
class SourceDataset:
    """Labeled samples from a single source."""

    source_id: int
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) uint32 classes or float64 reals
    task: TaskKind

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if not np.all(np.isfinite(X)):
            raise NonFinite(f"source {self.source_id}: non-finite features")
        y = np.asarray(self.labels)
        if y.shape != (X.shape[0],):
            raise ValueError("features and labels must have equal length")
        if self.task.is_classification:
            yi = np.asarray(y, dtype=np.int64)
            if np.any(yi != np.asarray(y, dtype=np.float64)):
                raise ValueError("classification labels must be integers")
            if yi.size and (yi.min() < 0 or yi.max() >= self.task.num_classes):
                raise ClassOutOfRange(
                    f"labels outside [0, {self.task.num_classes})"
                )
            y = yi.astype(np.uint32)
        else:
            y = np.asarray(y, dtype=np.float64)
            if not np.all(np.isfinite(y)):
                raise NonFinite(f"source {self.source_id}: non-finite labels")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, idx: np.ndarray) -> "SourceDataset":
        return SourceDataset(
            self.source_id, self.features[idx], self.labels[idx], self.task
        )


@dataclass(frozen=True)
class MultiSourceData:
    """K per-source datasets sharing a feature dimension and task."""

    sources: tuple[SourceDataset, ...]
    task: TaskKind

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ValueError("need at least one source (K >= 1)")
        dims = {s.dim for s in self.sources}
        if len(dims) != 1:
            raise ValueError("sources disagree on feature dimension")
        if any(s.task != self.task for s in self.sources):
            raise ValueError("sources disagree on task kind")
        object.__setattr__(self, "sources", tuple(self.sources))

    @property
    def K(self) -> int:
        return len(self.sources)

    @property
    def dim(self) -> int:
        return self.sources[0].dim

    @property
    def n_total(self) -> int:
        return sum(s.n for s in self.sources)

    @property
    def weights(self) -> np.ndarray:
        """Source fractions w_k = n_k / n."""
        n = np.array([s.n for s in self.sources], dtype=np.float64)
        return n / n.sum()

    def source(self, k: int) -> SourceDataset:
        if not 0 <= k < self.K:
            raise UnknownSource(f"source {k} not in [0, {self.K})")
        return self.sources[k]


@dataclass(frozen=True)
class SplitPlan:
    """Seeded (train, calib, test) fractions; floors for train/calib,
    remainder to test."""

    seed: int
    fractions: tuple[float, float, float] = (0.375, 0.125, 0.5)

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        if len(f) != 3 or any(x < 0 or x > 1 for x in f):
            raise BadFractions(f"fractions must lie in [0,1]: {f}")
        if abs(sum(f) - 1.0) > 1e-12:
            raise BadFractions(f"fractions must sum to 1: {f}")
        object.__setattr__(self, "fractions", f)


def split(
    data: MultiSourceData, plan: SplitPlan
) -> tuple[MultiSourceData, MultiSourceData, MultiSourceData]:
    """Partition each source into train/calib/test folds.

    The within-source permutation is a pure function of
    (plan.seed, source_id, n_k); fold sizes are floor(frac * n_k) for train
    and calib with the remainder going to test.
    """
    f_train, f_calib, _ = plan.fractions
    out: list[list[SourceDataset]] = [[], [], []]
    for src in data.sources:
        n = src.n
        if n < 3:
            raise TooFewSamples(f"source {src.source_id} has {n} < 3 samples")
        perm = stream(plan.seed, src.source_id, n, TAG_SPLIT).permutation(n)
        n_train = int(np.floor(f_train * n))
        n_calib = int(np.floor(f_calib * n))
        if n_calib == 0:
            raise EmptySource(
                f"source {src.source_id}: calibration fold is empty"
            )
        idx = (
            perm[:n_train],
            perm[n_train : n_train + n_calib],
            perm[n_train + n_calib :],
        )
        for part, sel in zip(out, idx):
            part.append(src.take(np.sort(sel)))
    return tuple(MultiSourceData(tuple(part), data.task) for part in out)


@dataclass(frozen=True)
class PooledRows:
    """Concatenation of all sources with per-row provenance retained."""

    features: np.ndarray    # (N, d)
    labels: np.ndarray      # (N,)
    source_ids: np.ndarray  # (N,) uint32
    row_ids: np.ndarray     # (N,) uint32 index within the origin source
    task: TaskKind
    weights: np.ndarray = field(repr=False, default=None)  # (K,) n_k/N

    @property
    def n(self) -> int:
        return self.features.shape[0]


def pool(data: MultiSourceData) -> PooledRows:
    """Pool sources into one dataset, keeping (source_id, row_id) provenance."""
    X = np.concatenate([s.features for s in data.sources], axis=0)
    y = np.concatenate([s.labels for s in data.sources], axis=0)
    sid = np.concatenate(
        [np.full(s.n, s.source_id, dtype=np.uint32) for s in data.sources]
    )
    rid = np.concatenate(
        [np.arange(s.n, dtype=np.uint32) for s in data.sources]
    )
    return PooledRows(
        _frozen(X), _frozen(y), _frozen(sid), _frozen(rid), data.task,
        _frozen(data.weights),
    )


def load_csv(path: str, task: TaskKind) -> MultiSourceData:
    """Load a `source,y,x1,...,xd` CSV into MultiSourceData.

    Source ids must be the contiguous integers 0..K-1.
    """
    df = pd.read_csv(path)
    cols = list(df.columns)
    expect = ["source", "y"] + [f"x{j}" for j in range(1, len(cols) - 1)]
    if cols != expect:
        raise ValueError(
            f"bad header {cols}; expected source,y,x1,...,xd"
        )
    if df.isna().any().any():
        raise NonFinite(f"{path}: missing or non-numeric entries")
    sids = np.sort(df["source"].unique())
    if not np.array_equal(sids, np.arange(len(sids))):
        raise UnknownSource(f"source ids must be 0..K-1, got {sids}")
    xcols = cols[2:]
    sources = []
    for k in sids:
        rows = df[df["source"] == k]
        sources.append(
            SourceDataset(
                int(k), rows[xcols].to_numpy(np.float64),
                rows["y"].to_numpy(), task,
            )
        )
    return MultiSourceData(tuple(sources), task)


def save_csv(data: MultiSourceData, path: str) -> None:
    """Write MultiSourceData in the `source,y,x1,...,xd` layout."""
    frames = []
    for s in data.sources:
        d = {"source": np.full(s.n, s.source_id, dtype=np.int64),
             "y": s.labels}
        for j in range(s.dim):
            d[f"x{j + 1}"] = s.features[:, j]
        frames.append(pd.DataFrame(d))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
