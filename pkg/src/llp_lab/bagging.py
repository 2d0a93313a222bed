"""Dataset ingestion, bag construction, three-way splits and synthetic draws."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    BaggedDataset,
    ConfigError,
    EmptyDatasetError,
    Example,
    SyntheticDistribution,
)

log = logging.getLogger(__name__)

SCALAR = "scalar"
HISTOGRAM = "histogram"


@dataclass(frozen=True)
class BaggingConfig:
    bag_size: int
    shuffle_seed: int = 0
    drop_remainder: bool = True

    def __post_init__(self):
        if self.bag_size < 1:
            raise ConfigError("bag size must be >= 1")
        if not self.drop_remainder:
            raise ConfigError("leftover examples are always discarded")


@dataclass(frozen=True)
class LabeledDataset:
    """Instances with labels in the clear.

    ``support_index`` is set for data drawn from a finite-support
    distribution, so that tabulated hypotheses can be evaluated.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int = 2
    support_index: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.labels, dtype=np.int64)
        if x.shape[0] != y.shape[0]:
            raise ConfigError("features and labels differ in length")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ConfigError(f"labels must lie in 0..{self.num_classes - 1}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def examples(self) -> list[Example]:
        return [Example(x, int(y), self.num_classes) for x, y in zip(self.features, self.labels)]

    def take(self, rows) -> "LabeledDataset":
        return LabeledDataset(
            self.features[rows],
            self.labels[rows],
            self.num_classes,
            None if self.support_index is None else self.support_index[rows],
            self.support,
        )


def aggregate_labels(labels: np.ndarray, num_classes: int, mode: str) -> np.ndarray:
    """Per-bag aggregates for a (m, k) label matrix."""
    k = labels.shape[1]
    if mode == SCALAR:
        return labels.sum(axis=1) / k
    if mode == HISTOGRAM:
        counts = np.stack([(labels == r).sum(axis=1) for r in range(num_classes)], axis=1)
        return counts / k
    raise ConfigError(f"unknown aggregate mode {mode!r}")


def make_bags(data: LabeledDataset, cfg: BaggingConfig, mode: str = SCALAR) -> BaggedDataset:
    """Shuffle with ``cfg.shuffle_seed`` and cut into non-overlapping bags.

    The permutation depends only on the seed and the dataset size, never on
    the labels; labels are read only to form the aggregates.
    """
    n, k = len(data), cfg.bag_size
    if n < k:
        raise EmptyDatasetError(f"{n} examples cannot fill a single bag of size {k}")
    perm = np.random.default_rng(cfg.shuffle_seed).permutation(n)
    m = n // k
    rows = perm[: m * k].reshape(m, k)
    aggregates = aggregate_labels(data.labels[rows], data.num_classes, mode)
    if data.support_index is not None:
        return BaggedDataset(aggregates, k, indices=data.support_index[rows],
                             support=data.support, num_classes=data.num_classes)
    return BaggedDataset(aggregates, k, features=data.features[rows], num_classes=data.num_classes)


def three_way_split(bags: BaggedDataset, seed: int) -> BaggedDataset:
    """Random S1/S2/S3 split of equal size m.

    When the bag count is not a multiple of 3, the remainder is dropped
    uniformly at random first. Returned bags are ordered S1, S2, S3.
    """
    total = len(bags)
    if total < 3:
        raise EmptyDatasetError("a three-way split needs at least 3 bags")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(total)
    m = total // 3
    keep = perm[: 3 * m]
    tags = np.repeat(np.arange(3, dtype=np.int8), m)
    return bags.take(keep, split_tags=tags)


def sample_dataset(dist: SyntheticDistribution, n: int, seed) -> LabeledDataset:
    """n i.i.d. draws: support point by the marginal, then the label by eta."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    idx = dist.draw_indices(rng, n)
    labels = dist.draw_labels(rng, idx)
    return LabeledDataset(dist.support[idx], labels, dist.num_classes, idx, dist.support)


def sample_bagged(dist: SyntheticDistribution, k: int, num_bags: int, rng: np.random.Generator,
                  mode: str = SCALAR) -> BaggedDataset:
    """i.i.d. bags straight from the distribution (index form, no features copied)."""
    idx = dist.draw_indices(rng, (num_bags, k))
    labels = dist.draw_labels(rng, idx)
    agg = aggregate_labels(labels, dist.num_classes, mode)
    return BaggedDataset(agg, k, indices=idx, support=dist.support, num_classes=dist.num_classes)


def bag_support_sample(dist: SyntheticDistribution, k: int, num_bags: int, rng: np.random.Generator):
    """Raw (indices, labels) arrays of shape (num_bags, k)."""
    idx = dist.draw_indices(rng, (num_bags, k))
    return idx, dist.draw_labels(rng, idx)


def load_distribution_json(path) -> SyntheticDistribution:
    """Read ``{"support": [[...]], "marginal": [...], "eta": [...]}``."""
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    try:
        return SyntheticDistribution(spec["support"], spec["marginal"], spec["eta"])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc.args[0]!r}") from None


def distribution_to_json(dist: SyntheticDistribution) -> dict:
    return {
        "support": dist.support.tolist(),
        "marginal": dist.marginal.tolist(),
        "eta": dist.eta.tolist(),
    }


def load_csv(
    path,
    label_column: int = -1,
    num_classes: int = 2,
    positive_labels: Optional[Sequence[str]] = None,
    header: bool = False,
    minmax: bool = False,
) -> LabeledDataset:
    """Load a numeric CSV file.

    Parameters
    ----------
    label_column : int
        Column holding the raw label; negative values count from the end.
    positive_labels : sequence of str, optional
        Binarisation rule: raw labels in this set map to 1, all others to 0.
        Without it raw labels must already be integers in 0..c-1.
    header : bool
        Skip the first row.
    minmax : bool
        Rescale every feature column to [0, 1].
    """
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        for row in reader:
            if row and any(cell.strip() for cell in row):
                rows.append((reader.line_num, row))
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    width = len(rows[0][1])
    col = label_column % width
    positives = None if positive_labels is None else {str(v).strip() for v in positive_labels}
    feats = np.empty((len(rows), width - 1))
    labels = np.empty(len(rows), dtype=np.int64)
    for i, (line, row) in enumerate(rows):
        if len(row) != width:
            raise ConfigError(f"{path}:{line}: expected {width} columns, got {len(row)}")
        raw_label = row[col].strip()
        if positives is not None:
            labels[i] = 1 if raw_label in positives else 0
        else:
            try:
                value = float(raw_label)
            except ValueError:
                raise ConfigError(f"{path}:{line}: column {col}: cannot parse label {raw_label!r}") from None
            if value != int(value) or not 0 <= value < num_classes:
                raise ConfigError(f"{path}:{line}: unknown label {raw_label!r} for {num_classes} classes")
            labels[i] = int(value)
        j = 0
        for c, cell in enumerate(row):
            if c == col:
                continue
            try:
                feats[i, j] = float(cell)
            except ValueError:
                raise ConfigError(f"{path}:{line}: column {c}: cannot parse {cell!r} as a number") from None
            j += 1
    if minmax:
        lo, hi = feats.min(axis=0), feats.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        feats = (feats - lo) / span
    c = 2 if positives is not None else num_classes
    log.info("loaded %d rows x %d features from %s", len(labels), feats.shape[1], path)
    return LabeledDataset(feats, labels, c)


def logistic_task(n: int, dim: int, seed, *, weight_scale: float = 2.0, bias: float = 0.0,
                  feature_shift: float = 0.0) -> LabeledDataset:
    """Gaussian features with labels drawn from a logistic model on a random direction.

    Features are N(feature_shift, I); the label logit is w . (x - feature_shift) + bias.

    The weight vector depends on the seed only through ``default_rng([seed, 0])``,
    so two calls with the same seed and different n share the model.
    """
    if n < 1 or dim < 1:
        raise ConfigError("n and dim must be >= 1")
    w = np.random.default_rng([seed, 0]).normal(size=dim)
    w *= weight_scale / np.linalg.norm(w)
    rng = np.random.default_rng([seed, 1, n])
    Z = rng.normal(size=(n, dim))
    p = 1.0 / (1.0 + np.exp(-(Z @ w + bias)))
    return LabeledDataset(Z + feature_shift, (rng.random(n) < p).astype(np.int64))


def drifting_stream(n: int, dim: int, seed, p_start: float = 0.2, p_end: float = 0.6,
                    weight_scale: float = 1.0) -> LabeledDataset:
    """An ordered stream whose base rate moves linearly from p_start to p_end.

    Labels follow a logistic model whose intercept tracks logit(p_t).
    """
    if not (0 < p_start < 1 and 0 < p_end < 1):
        raise ConfigError("base rates must lie in (0, 1)")
    w = np.random.default_rng([seed, 0]).normal(size=dim)
    w *= weight_scale / np.linalg.norm(w)
    rng = np.random.default_rng([seed, 2, n])
    X = rng.normal(size=(n, dim))
    pt = np.linspace(p_start, p_end, n)
    logits = X @ w + np.log(pt / (1.0 - pt))
    return LabeledDataset(X, (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int64))
