"""Shared domain types: examples, bags, decomposed losses, tabulated hypotheses.

Everything here is an immutable value object. Algorithms live in the sibling
modules; this module only knows how to validate and evaluate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

CLAMP_EPS = 1e-7
_SIMPLEX_TOL = 1e-9


class LLPError(Exception):
    """Base class for library errors."""


class ConfigError(LLPError, ValueError):
    """Invalid configuration (unknown loss name, bad sizes, ...)."""


class DomainError(LLPError, ValueError):
    """A prediction lies outside the domain of a loss."""


class EmptyDatasetError(LLPError, ValueError):
    pass


class InsufficientSamplesError(LLPError, ValueError):
    pass


ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if not 0 <= self.label < self.num_classes:
            raise ConfigError(f"label {self.label} outside 0..{self.num_classes - 1}")


@dataclass(frozen=True)
class Bag:
    """k feature vectors whose labels are only revealed through ``aggregate``.

    ``aggregate`` is a float (label proportion, or mean count in the total
    multi-class setting) or a length-c histogram of class fractions.
    ``indices`` optionally records the support index of each member, which is
    what tabulated hypotheses are evaluated on.
    """

    members: np.ndarray
    aggregate: Union[float, np.ndarray]
    indices: Optional[np.ndarray] = None
    num_classes: int = 2

    def __post_init__(self):
        members = np.asarray(self.members, dtype=float)
        if members.ndim == 1:
            members = members[:, None]
        object.__setattr__(self, "members", members)
        k = members.shape[0]
        if k < 1:
            raise ConfigError("a bag needs at least one member")
        if self.indices is not None:
            idx = np.asarray(self.indices, dtype=np.int64)
            if idx.shape != (k,):
                raise ConfigError("indices must have one entry per member")
            object.__setattr__(self, "indices", idx)
        if np.ndim(self.aggregate) == 0:
            a = float(self.aggregate)
            if not 0.0 <= a <= self.num_classes - 1:
                raise ConfigError(f"scalar aggregate {a} outside [0, {self.num_classes - 1}]")
            object.__setattr__(self, "aggregate", a)
        else:
            hist = np.asarray(self.aggregate, dtype=float)
            if abs(hist.sum() - 1.0) > _SIMPLEX_TOL or np.any(hist < 0) or np.any(hist > 1):
                raise ConfigError("histogram aggregate must be a probability vector")
            scaled = hist * k
            if np.any(np.abs(scaled - np.round(scaled)) > _SIMPLEX_TOL * k):
                raise ConfigError("histogram entries must be multiples of 1/k")
            object.__setattr__(self, "aggregate", hist)

    @property
    def k(self) -> int:
        return self.members.shape[0]

    @property
    def is_histogram(self) -> bool:
        return isinstance(self.aggregate, np.ndarray)


SPLIT_NAMES = ("S1", "S2", "S3")


@dataclass(frozen=True)
class BaggedDataset:
    """A collection of equally sized bags stored as stacked arrays.

    Parameters
    ----------
    aggregates : array, shape (m,) or (m, c)
        Scalar label proportions or per-class histograms.
    bag_size : int
    indices : array (m, k), optional
        Support index of every member (synthetic data).
    features : array (m, k, d), optional
        Explicit member features. When absent they are looked up from
        ``support`` through ``indices``.
    split_tags : array (m,), optional
        0, 1, 2 for S1, S2, S3.
    """

    aggregates: np.ndarray
    bag_size: int
    indices: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None
    split_tags: Optional[np.ndarray] = None
    num_classes: int = 2

    def __post_init__(self):
        agg = np.asarray(self.aggregates, dtype=float)
        object.__setattr__(self, "aggregates", agg)
        m = agg.shape[0]
        if self.bag_size < 1:
            raise ConfigError("bag_size must be >= 1")
        if self.indices is None and self.features is None:
            raise ConfigError("a bagged dataset needs member features or support indices")
        if self.indices is not None and self.indices.shape != (m, self.bag_size):
            raise ConfigError("indices must have shape (num_bags, bag_size)")
        if self.features is not None and self.features.shape[:2] != (m, self.bag_size):
            raise ConfigError("features must have shape (num_bags, bag_size, d)")
        if self.split_tags is not None:
            tags = np.asarray(self.split_tags, dtype=np.int8)
            if tags.shape != (m,):
                raise ConfigError("split_tags must have one entry per bag")
            counts = np.bincount(tags, minlength=3)
            if counts.size != 3 or not counts[0] == counts[1] == counts[2]:
                raise ConfigError("S1, S2, S3 must have equal size")
            object.__setattr__(self, "split_tags", tags)

    def __len__(self) -> int:
        return self.aggregates.shape[0]

    @property
    def is_histogram(self) -> bool:
        return self.aggregates.ndim == 2

    def member_features(self) -> np.ndarray:
        if self.features is not None:
            return self.features
        if self.support is None:
            raise ConfigError("no support attached; cannot materialise features")
        return self.support[self.indices]

    def bag(self, j: int) -> Bag:
        feats = self.member_features()[j]
        idx = None if self.indices is None else self.indices[j]
        return Bag(feats, self.aggregates[j], idx, self.num_classes)

    @property
    def bags(self) -> list[Bag]:
        return [self.bag(j) for j in range(len(self))]

    def take(self, rows: np.ndarray, split_tags: Optional[np.ndarray] = None) -> "BaggedDataset":
        return BaggedDataset(
            aggregates=self.aggregates[rows],
            bag_size=self.bag_size,
            indices=None if self.indices is None else self.indices[rows],
            features=None if self.features is None else self.features[rows],
            support=self.support,
            split_tags=split_tags,
            num_classes=self.num_classes,
        )

    def split(self, name: str) -> "BaggedDataset":
        """Bags tagged ``name`` ("S1", "S2" or "S3"), in stored order."""
        if self.split_tags is None:
            raise ConfigError("dataset has no three-way split")
        rows = np.flatnonzero(self.split_tags == SPLIT_NAMES.index(name))
        return self.take(rows)

    @property
    def m(self) -> int:
        if self.split_tags is None:
            raise ConfigError("dataset has no three-way split")
        return len(self) // 3


@dataclass(frozen=True)
class DecomposedLoss:
    """A loss affine in the label: ``loss(h, y) = f1(h) + y * f2(h)``.

    ``domain`` is ``(lo, hi, lo_open, hi_open)``. Predictions outside the
    domain raise :class:`DomainError`, unless ``clamp`` is set, in which case
    they are clipped to ``[lo + CLAMP_EPS, hi - CLAMP_EPS]`` for open ends.
    """

    name: str
    raw_f1: ArrayFn
    raw_f2: ArrayFn
    raw_df1: ArrayFn
    raw_df2: ArrayFn
    y_max: float = 1.0
    domain: tuple = (0.0, 1.0, False, False)
    clamp: bool = False

    def prepare(self, h) -> np.ndarray:
        # extended precision passes through (used by the sandwich scan)
        h = np.asarray(h)
        h = h if h.dtype == np.longdouble else h.astype(float)
        lo, hi, lo_open, hi_open = self.domain
        if self.clamp:
            lo_c = lo + CLAMP_EPS if lo_open else lo
            hi_c = hi - CLAMP_EPS if hi_open else hi
            return np.clip(h, lo_c, hi_c)
        bad = (h < lo) | (h > hi) | np.isnan(h)
        if lo_open:
            bad |= h == lo
        if hi_open:
            bad |= h == hi
        if np.any(bad):
            first = h[bad].ravel()[0]
            raise DomainError(f"{self.name} loss undefined at prediction {first!r}")
        return h

    def f1(self, h) -> np.ndarray:
        return self.raw_f1(self.prepare(h))

    def f2(self, h) -> np.ndarray:
        return self.raw_f2(self.prepare(h))

    def df1(self, h) -> np.ndarray:
        return self.raw_df1(self.prepare(h))

    def df2(self, h) -> np.ndarray:
        return self.raw_df2(self.prepare(h))

    def with_clamp(self, clamp: bool = True) -> "DecomposedLoss":
        return DecomposedLoss(self.name, self.raw_f1, self.raw_f2, self.raw_df1, self.raw_df2,
                              self.y_max, self.domain, clamp)

    @property
    def is_affine_total(self) -> bool:
        return self.name in ("poisson", "square_count")


def _square(y_max: float) -> DecomposedLoss:
    return DecomposedLoss(
        "square",
        lambda h: h * h,
        lambda h: 1.0 - 2.0 * h,
        lambda h: 2.0 * h,
        lambda h: np.full_like(h, -2.0),
        y_max=y_max,
        domain=(0.0, 1.0, False, False),
    )


def _log() -> DecomposedLoss:
    return DecomposedLoss(
        "log",
        lambda h: -np.log1p(-h),
        lambda h: np.log1p(-h) - np.log(h),
        lambda h: 1.0 / (1.0 - h),
        lambda h: -1.0 / (1.0 - h) - 1.0 / h,
        y_max=1.0,
        domain=(0.0, 1.0, True, True),
    )


def _poisson(y_max: float) -> DecomposedLoss:
    return DecomposedLoss(
        "poisson",
        lambda h: h.copy(),
        lambda h: -np.log(h),
        lambda h: np.ones_like(h),
        lambda h: -1.0 / h,
        y_max=y_max,
        domain=(0.0, math.inf, True, False),
    )


BINARY_LOSSES = ("square", "log", "poisson")


def decompose_binary(loss_name: str, *, y_max: float = 1.0, clamp: bool = False) -> DecomposedLoss:
    """Return the (f1, f2) decomposition of a named loss.

    square -> (h^2, 1 - 2h), log -> (log 1/(1-h), log (1-h)/h),
    poisson -> (h, -log h). ``y_max`` is only meaningful for poisson, whose
    labels are counts.
    """
    if loss_name == "square":
        loss = _square(1.0)
    elif loss_name == "log":
        loss = _log()
    elif loss_name == "poisson":
        loss = _poisson(y_max)
    else:
        raise ConfigError(f"unknown loss {loss_name!r}; expected one of {BINARY_LOSSES}")
    return loss.with_clamp(clamp) if clamp else loss


def decompose_total(loss_name: str, num_classes: int) -> DecomposedLoss:
    """Affine losses for count labels y in {0..c-1}.

    ``square`` drops the prediction-independent y^2 term, leaving
    (h^2, -2h) on [0, c-1]. ``poisson`` is h - y log h.
    """
    y_max = float(num_classes - 1)
    if loss_name == "poisson":
        return _poisson(y_max)
    if loss_name in ("square", "square_count"):
        return DecomposedLoss(
            "square_count",
            lambda h: h * h,
            lambda h: -2.0 * h,
            lambda h: 2.0 * h,
            lambda h: np.full_like(h, -2.0),
            y_max=y_max,
            domain=(0.0, y_max, False, False),
        )
    raise ConfigError(f"loss {loss_name!r} is not affine in the label; total mode needs poisson or square")


def instance_loss(loss: DecomposedLoss, prediction, label):
    label_arr = np.asarray(label, dtype=float)
    if np.any(label_arr < 0) or np.any(label_arr > loss.y_max):
        raise ConfigError(f"label outside 0..{loss.y_max}")
    out = loss.f1(prediction) + label_arr * loss.f2(prediction)
    return float(out) if np.ndim(out) == 0 else out


def cap_count_prediction(pred, cap: float):
    """Clip count-model outputs to (0, cap]; the loss itself is never capped."""
    return np.clip(np.asarray(pred, dtype=float), CLAMP_EPS, cap)


@dataclass(frozen=True)
class MulticlassLoss:
    """``loss(h, y) = sum_r 1{y = r} component(h, r)`` with c components.

    ``component(pred, r)`` takes predictions of shape (..., c) (or whatever
    the hypothesis emits) and returns loss values of shape (...).
    """

    name: str
    num_classes: int
    component: Callable[[np.ndarray, int], np.ndarray]
    component_grad: Optional[Callable[[np.ndarray, int], np.ndarray]] = None

    def components(self, pred) -> np.ndarray:
        """All c components stacked on the last axis."""
        pred = np.asarray(pred, dtype=float)
        return np.stack([self.component(pred, r) for r in range(self.num_classes)], axis=-1)

    def __call__(self, pred, label):
        comps = self.components(pred)
        label = np.asarray(label, dtype=np.int64)
        return np.take_along_axis(comps, label[..., None], axis=-1)[..., 0]


def _xent_component(pred: np.ndarray, r: int) -> np.ndarray:
    q = pred[..., r]
    if np.any(q <= 0):
        raise DomainError("cross-entropy undefined for a zero class probability")
    return -np.log(q)


def _xent_grad(pred: np.ndarray, r: int) -> np.ndarray:
    g = np.zeros_like(pred)
    g[..., r] = -1.0 / pred[..., r]
    return g


def _brier_component(pred: np.ndarray, r: int) -> np.ndarray:
    onehot = np.zeros(pred.shape[-1])
    onehot[r] = 1.0
    return np.sum((pred - onehot) ** 2, axis=-1)


def _brier_grad(pred: np.ndarray, r: int) -> np.ndarray:
    onehot = np.zeros(pred.shape[-1])
    onehot[r] = 1.0
    return 2.0 * (pred - onehot)


def multiclass_cross_entropy(num_classes: int) -> MulticlassLoss:
    return MulticlassLoss("cross_entropy", num_classes, _xent_component, _xent_grad)


def multiclass_brier(num_classes: int) -> MulticlassLoss:
    return MulticlassLoss("brier", num_classes, _brier_component, _brier_grad)


def multiclass_from_binary(loss: DecomposedLoss) -> MulticlassLoss:
    """View a binary loss as a 2-component loss on predictions (1 - h, h)."""

    def component(pred, r):
        h = pred[..., 1]
        return loss.f1(h) if r == 0 else loss.f1(h) + loss.f2(h)

    return MulticlassLoss(f"{loss.name}_as_multiclass", 2, component)


@dataclass(frozen=True)
class Hypothesis:
    """A predictor tabulated over a finite feature support.

    ``table`` has shape (|X|,) for scalar outputs or (|X|, c) for simplex
    outputs. Points are identified by support index.
    """

    table: np.ndarray
    id: str
    kind: str = "probability"  # probability | simplex | count

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", t)
        if self.kind == "probability":
            if t.ndim != 1 or np.any(t < 0) or np.any(t > 1):
                raise ConfigError(f"hypothesis {self.id}: predictions must lie in [0, 1]")
        elif self.kind == "simplex":
            if t.ndim != 2 or np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > _SIMPLEX_TOL):
                raise ConfigError(f"hypothesis {self.id}: rows must lie on the simplex")
        elif self.kind == "count":
            if t.ndim != 1 or np.any(t < 0):
                raise ConfigError(f"hypothesis {self.id}: count predictions must be >= 0")
        else:
            raise ConfigError(f"unknown hypothesis kind {self.kind!r}")

    def predict(self, indices) -> np.ndarray:
        return self.table[np.asarray(indices)]

    @property
    def support_size(self) -> int:
        return self.table.shape[0]


@dataclass(frozen=True)
class FiniteHypothesisClass:
    hypotheses: tuple

    def __init__(self, hypotheses: Sequence[Hypothesis]):
        hyps = tuple(hypotheses)
        if not hyps:
            raise ConfigError("hypothesis class must be nonempty")
        ids = [h.id for h in hyps]
        if len(set(ids)) != len(ids):
            raise ConfigError("hypothesis ids must be distinct")
        object.__setattr__(self, "hypotheses", hyps)

    def __len__(self) -> int:
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    def __getitem__(self, i) -> Hypothesis:
        return self.hypotheses[i]

    def by_id(self, hid: str) -> Hypothesis:
        for h in self.hypotheses:
            if h.id == hid:
                return h
        raise KeyError(hid)

    @property
    def ids(self) -> list[str]:
        return [h.id for h in self.hypotheses]


@dataclass(frozen=True)
class SyntheticDistribution:
    """Finite-support distribution with known conditional label law.

    ``eta`` is P(y=1|x) per support point for binary data, or a (|X|, c)
    matrix of class probabilities.
    """

    support: np.ndarray
    marginal: np.ndarray
    eta: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        marginal = np.asarray(self.marginal, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        if marginal.shape != (support.shape[0],):
            raise ConfigError("marginal must have one entry per support point")
        if np.any(marginal < 0) or abs(marginal.sum() - 1.0) > 1e-12:
            raise ConfigError("marginal must be a probability vector")
        if eta.shape[0] != support.shape[0] or eta.ndim not in (1, 2):
            raise ConfigError("eta must have one row per support point")
        if eta.ndim == 1:
            if np.any(eta < 0) or np.any(eta > 1):
                raise ConfigError("eta entries must lie in [0, 1]")
        elif np.any(eta < 0) or np.any(np.abs(eta.sum(axis=1) - 1.0) > 1e-12):
            raise ConfigError("eta rows must be probability vectors")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "marginal", marginal)
        object.__setattr__(self, "eta", eta)
        cdf = np.cumsum(marginal)
        cdf[-1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    @property
    def num_classes(self) -> int:
        return 2 if self.eta.ndim == 1 else self.eta.shape[1]

    @property
    def size(self) -> int:
        return self.support.shape[0]

    def class_probs(self) -> np.ndarray:
        """(|X|, c) matrix of P(y=r|x), also for binary data."""
        if self.eta.ndim == 1:
            return np.stack([1.0 - self.eta, self.eta], axis=1)
        return self.eta

    def conditional_mean(self) -> np.ndarray:
        """E[y|x] per support point (equals eta for binary data)."""
        if self.eta.ndim == 1:
            return self.eta
        return self.eta @ np.arange(self.eta.shape[1], dtype=float)

    @property
    def p(self) -> float:
        """E[y]."""
        return float(self.marginal @ self.conditional_mean())

    @property
    def class_marginal(self) -> np.ndarray:
        return self.marginal @ self.class_probs()

    def expect(self, values) -> float:
        """E_x[values(x)] for a per-support-point array."""
        return float(self.marginal @ np.asarray(values, dtype=float))

    def draw_indices(self, rng: np.random.Generator, shape) -> np.ndarray:
        u = rng.random(shape)
        return np.minimum(np.searchsorted(self._cdf, u, side="right"), self.size - 1)

    def draw_labels(self, rng: np.random.Generator, indices: np.ndarray) -> np.ndarray:
        u = rng.random(indices.shape)
        if self.eta.ndim == 1:
            return (u < self.eta[indices]).astype(np.int64)
        cum = np.cumsum(self.eta, axis=1)
        cum[:, -1] = 1.0
        rows = cum[indices]
        return np.sum(u[..., None] >= rows, axis=-1).astype(np.int64)
