"""Tabular binary-classification data: loading, train/test partitions, bags,
and the feature-similarity table used to repair crossover offspring."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

TRAIN_FRACTION = 0.70
BAG_FRACTION = 0.60


class DataError(ValueError):
    """Raised when a data file cannot be turned into a valid Dataset."""


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    class_values: tuple[str, str] = ("0", "1")

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n_obs, n_feat = X.shape
        if n_obs < 2 or n_feat < 1:
            raise DataError(f"need at least 2 observations and 1 feature, got {X.shape}")
        if y.shape != (n_obs,):
            raise DataError(f"labels must have length {n_obs}, got {y.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0/1")
        if len(np.unique(y)) != 2:
            raise DataError("both classes must be present")
        names = tuple(self.feature_names) if self.feature_names else tuple(f"x{i}" for i in range(n_feat))
        if len(names) != n_feat:
            raise DataError(f"{len(names)} feature names for {n_feat} features")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "feature_names", names)

    @property
    def n_obs(self) -> int:
        return self.features.shape[0]

    @property
    def n_feat(self) -> int:
        return self.features.shape[1]


def _label_sort_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def load_csv(path, label_column: int | str = -1, header: bool = True) -> Dataset:
    """Read a comma-separated file into a Dataset.

    ``label_column`` is a column name (requires ``header``) or an integer
    index; negative indices count from the right. The smaller of the two raw
    label values (numerically when both parse as numbers, otherwise
    lexicographically) becomes class 0.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        head, rows = [c.strip() for c in rows[0]], rows[1:]
    else:
        head = None
    if not rows:
        raise DataError(f"{path}: empty file")

    width = len(rows[0])
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if head is None or label_column not in head:
            raise DataError(f"{path}: label column {label_column!r} not found")
        li = head.index(label_column)
    else:
        li = int(label_column)
        if not -width <= li < width:
            raise DataError(f"{path}: label column index {li} out of range for {width} columns")
        li %= width

    feats, raw_labels = [], []
    first_data_line = 2 if header else 1
    for r_i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {r_i + first_data_line} has {len(row)} cells, expected {width}")
        vals = []
        for c_i, cell in enumerate(row):
            if c_i == li:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r_i + first_data_line}, column {c_i}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r_i + first_data_line}, column {c_i}: non-finite value {cell!r}")
            vals.append(v)
        feats.append(vals)
        raw_labels.append(row[li].strip())

    classes = sorted(set(raw_labels), key=_label_sort_key)
    if len(classes) != 2:
        raise DataError(f"{path}: expected exactly two label values, found {len(classes)}")
    if width < 2:
        raise DataError(f"{path}: no feature columns")
    labels = np.array([classes.index(v) for v in raw_labels], dtype=np.int64)
    names = [h for i, h in enumerate(head) if i != li] if head else None
    return Dataset(np.array(feats, dtype=np.float64), labels, tuple(names or ()), (classes[0], classes[1]))


@dataclass(frozen=True, eq=False)
class DataSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "train_indices", _frozen(np.asarray(self.train_indices, dtype=np.int64)))
        object.__setattr__(self, "test_indices", _frozen(np.asarray(self.test_indices, dtype=np.int64)))


def split(ds: Dataset, rng: np.random.Generator) -> DataSplit:
    """Uniform (unstratified) 70/30 partition of the observations."""
    n = ds.n_obs
    n_train = min(max(round_half_up(TRAIN_FRACTION * n), 1), n - 1)
    perm = rng.permutation(n)
    return DataSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:]))


class SamplingMode(enum.Enum):
    FIXED_OBS = "fixed"  # 60% of training observations, every feature
    RANDOM_OBS_FEAT = "random"  # random counts of observations and features
    FULL_DATA = "full"


@dataclass(frozen=True, eq=False)
class Bag:
    """Observations (dataset row indices) and features one tree may use."""

    obs_indices: np.ndarray
    feature_mask: tuple[int, ...]

    def __post_init__(self):
        obs = np.asarray(self.obs_indices, dtype=np.int64)
        if obs.size == 0 or not self.feature_mask:
            raise ValueError("bags need at least one observation and one feature")
        object.__setattr__(self, "obs_indices", _frozen(obs))
        object.__setattr__(self, "feature_mask", tuple(sorted(int(f) for f in self.feature_mask)))


def sample_bag(sp: DataSplit, n_feat: int, mode: SamplingMode, rng: np.random.Generator) -> Bag:
    train = sp.train_indices
    n_train = len(train)
    if mode is SamplingMode.FULL_DATA:
        return Bag(train.copy(), tuple(range(n_feat)))
    if mode is SamplingMode.FIXED_OBS:
        n_obs = max(1, round_half_up(BAG_FRACTION * n_train))
        obs = rng.choice(train, size=n_obs, replace=False)
        return Bag(np.sort(obs), tuple(range(n_feat)))
    if mode is SamplingMode.RANDOM_OBS_FEAT:
        n_obs = int(rng.integers(1, n_train + 1))
        n_sel = int(rng.integers(1, n_feat + 1))
        obs = rng.choice(train, size=n_obs, replace=False)
        feats = rng.choice(n_feat, size=n_sel, replace=False)
        return Bag(np.sort(obs), tuple(int(f) for f in feats))
    raise ValueError(f"unknown sampling mode {mode!r}")


@dataclass(frozen=True, eq=False)
class FeatureSimilarity:
    sim: np.ndarray

    def most_similar(self, feature: int, legal: Sequence[int]) -> int:
        """Legal feature with the highest similarity to ``feature``; lowest index wins ties."""
        legal = sorted(legal)
        scores = self.sim[feature, legal]
        return int(legal[int(np.argmax(scores))])


def magnitude_cosine(X: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between columns of ``X`` computed on absolute
    values, so every entry lies in [0, 1]. Zero-norm columns score 0 against
    everything, themselves included."""
    A = np.abs(np.asarray(X, dtype=np.float64))
    # scale each column by its max first so the dot products cannot overflow
    scale = A.max(axis=0)
    nz = scale > 0
    A = np.where(nz, A / np.where(nz, scale, 1.0), 0.0)
    norms = np.sqrt((A * A).sum(axis=0))
    dots = A.T @ A
    denom = np.outer(norms, norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        S = np.where(denom > 0, dots / denom, 0.0)
    np.fill_diagonal(S, np.where(nz, 1.0, 0.0))
    return np.clip((S + S.T) / 2.0, 0.0, 1.0)


def feature_similarity(ds: Dataset, sp: DataSplit) -> FeatureSimilarity:
    if len(sp.train_indices) == 0:
        raise ValueError("feature similarity needs at least one training observation")
    return FeatureSimilarity(_frozen(magnitude_cosine(ds.features[sp.train_indices])))


def two_gaussians(n_obs: int = 700, n_feat: int = 10, separation: float = 1.0,
                  positive_fraction: float = 0.65, seed: int = 0) -> Dataset:
    """Synthetic stand-in for a small tabular problem: two isotropic Gaussian
    classes whose means differ by ``separation`` on every feature."""
    rng = np.random.default_rng(seed)
    n_pos = round_half_up(positive_fraction * n_obs)
    n_pos = min(max(n_pos, 1), n_obs - 1)
    y = np.zeros(n_obs, dtype=np.int64)
    y[:n_pos] = 1
    rng.shuffle(y)
    X = rng.normal(size=(n_obs, n_feat)) + separation * y[:, None]
    return Dataset(X, y, tuple(f"x{i}" for i in range(n_feat)))
