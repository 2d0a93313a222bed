"""Bag-level loss estimators and the median-of-means machinery.

Binary (and affine total multi-class) losses use the centred bag loss

    E[f1] + p E[f2] + (alpha - p) * (sum_i f2(h(x_i)) - k E[f2]),

whose variance does not grow with the bag size k. The full-histogram
multi-class version replaces (f1, f2) by the c loss components.

The pairwise statistic Q estimates L(h1) - L(h2) from a three-way split:
S1 gives the expectations of the loss differences (median of means over the
m*k instances), S2 gives the label marginal, and Q is a median of means of
the per-bag difference estimates over S3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .core import (
    Bag,
    BaggedDataset,
    ConfigError,
    DecomposedLoss,
    Hypothesis,
    InsufficientSamplesError,
    MulticlassLoss,
)


def default_group_count(delta: float) -> int:
    return max(1, math.ceil(8.0 * math.log(1.0 / delta)))


@dataclass(frozen=True)
class MomConfig:
    delta: float = 0.05
    group_count: Optional[int] = None
    partition_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if self.group_count is None:
            object.__setattr__(self, "group_count", default_group_count(self.delta))
        if self.group_count < 1:
            raise ConfigError("group_count must be >= 1")


@lru_cache(maxsize=64)
def _partition(n: int, r: int, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(r, n // r)
    sizes[: n % r] += 1
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return perm, starts, sizes


def group_means(values, cfg: MomConfig) -> np.ndarray:
    """Means of the r random groups used by :func:`mom`."""
    v = np.asarray(values, dtype=float).ravel()
    n, r = v.size, cfg.group_count
    if n < r:
        raise InsufficientSamplesError(f"median of means with {r} groups needs >= {r} values, got {n}")
    perm, starts, sizes = _partition(n, r, cfg.partition_seed)
    return np.add.reduceat(v[perm], starts) / sizes


def mom(values, cfg: MomConfig) -> float:
    """Median of the group means; an even group count averages the two middle ones.

    The partition depends only on (len(values), group_count, partition_seed),
    so ``mom(-v) == -mom(v)`` holds exactly.
    """
    means = np.sort(group_means(values, cfg))
    r = means.size
    if r % 2:
        return float(means[r // 2])
    return float((means[r // 2 - 1] + means[r // 2]) / 2.0)


@dataclass
class ParamEstimates:
    """Plug-in estimates feeding the per-bag difference estimator.

    Binary/total mode fills ``e1_hat`` and ``e2_hat``; histogram mode fills
    ``e_hat`` (one entry per class) and uses a vector ``p_hat``.
    """

    p_hat: object
    e1_hat: Optional[float] = None
    e2_hat: Optional[float] = None
    e_hat: Optional[np.ndarray] = None
    source_tags: dict = field(default_factory=dict)


# --- binary / total -----------------------------------------------------------

def bag_predictions(h: Hypothesis, bags) -> np.ndarray:
    if isinstance(bags, Bag):
        if bags.indices is None:
            raise ConfigError("tabulated hypotheses need support indices on the bag")
        return h.predict(bags.indices)
    if bags.indices is None:
        raise ConfigError("tabulated hypotheses need support indices on the bags")
    return h.predict(bags.indices)


def centred_bag_values(f2_sums, alphas, k: int, p, e1, e2) -> np.ndarray:
    """e1 + p e2 + (alpha - p)(sum f2 - k e2), elementwise over bags."""
    return e1 + p * e2 + (np.asarray(alphas) - p) * (np.asarray(f2_sums) - k * e2)


def bag_loss_values(loss: DecomposedLoss, h: Hypothesis, bags: BaggedDataset, p: float,
                    e_f1: float, e_f2: float) -> np.ndarray:
    """Vectorised :func:`bag_loss` over every bag of ``bags``."""
    f2 = loss.f2(bag_predictions(h, bags))
    return centred_bag_values(f2.sum(axis=1), bags.aggregates, bags.bag_size, p, e_f1, e_f2)


def bag_loss(loss: DecomposedLoss, h: Hypothesis, z: Bag, p: float, e_f1: float, e_f2: float) -> float:
    """Unbiased bag-level estimate of L(h) given the exact p, E[f1], E[f2]."""
    if z.is_histogram:
        raise ConfigError("bag_loss needs a scalar aggregate")
    f2 = loss.f2(bag_predictions(h, z))
    return float(centred_bag_values(f2.sum(), z.aggregate, z.k, p, e_f1, e_f2))


def total_bag_loss(loss: DecomposedLoss, h: Hypothesis, z: Bag, p: float, e_f1: float, e_f2: float) -> float:
    """Same estimator for count labels in 0..c-1 observed only through their mean.

    Only losses affine in the label qualify; p is E[y] in [0, c-1].
    """
    if not (loss.is_affine_total or loss.y_max == 1.0):
        raise ConfigError(f"loss {loss.name!r} is not affine in a count label")
    if not 0.0 <= z.aggregate <= loss.y_max:
        raise ConfigError("aggregate outside [0, c-1]")
    return bag_loss(loss, h, z, p, e_f1, e_f2)


def easyllp_values(f1, f2, alphas, p) -> np.ndarray:
    """EasyLLP bag loss from per-instance (f1, f2) of shape (m, k).

    (1/k) sum_i [(k(a-p)+p) l(h_i,1) + (k(p-a)+1-p) l(h_i,0)], which with
    l(h,1) = f1+f2 and l(h,0) = f1 simplifies to
    mean f1 + p mean f2 + (a - p) sum f2.
    """
    f1 = np.asarray(f1)
    f2 = np.asarray(f2)
    k = f1.shape[-1]
    a = np.asarray(alphas)
    w1 = k * (a - p) + p
    w0 = k * (p - a) + (1.0 - p)
    return (w1[..., None] * (f1 + f2) + w0[..., None] * f1).sum(axis=-1) / k


def easyllp_bag_loss_values(loss: DecomposedLoss, h: Hypothesis, bags: BaggedDataset, p: float) -> np.ndarray:
    preds = bag_predictions(h, bags)
    return easyllp_values(loss.f1(preds), loss.f2(preds), bags.aggregates, p)


def diff_bag_loss(loss: DecomposedLoss, h1: Hypothesis, h2: Hypothesis, z: Bag, est: ParamEstimates) -> float:
    """Plug-in estimate of L(h1) - L(h2) from a single bag."""
    d2 = loss.f2(bag_predictions(h1, z)) - loss.f2(bag_predictions(h2, z))
    return float(centred_bag_values(d2.sum(), z.aggregate, z.k, est.p_hat, est.e1_hat, est.e2_hat))


def estimate_params(loss: DecomposedLoss, h1: Hypothesis, h2: Hypothesis, S1: BaggedDataset,
                    S2: BaggedDataset, cfg: MomConfig) -> ParamEstimates:
    """E[delta f1], E[delta f2] by median of means over S1's instances; p by the S2 mean."""
    if len(S1) == 0 or len(S2) == 0:
        raise InsufficientSamplesError("S1 and S2 must be nonempty")
    p1, p2 = bag_predictions(h1, S1).ravel(), bag_predictions(h2, S1).ravel()
    e1 = mom(loss.f1(p1) - loss.f1(p2), cfg)
    e2 = mom(loss.f2(p1) - loss.f2(p2), cfg)
    p_hat = float(np.mean(S2.aggregates))
    return ParamEstimates(p_hat, e1, e2, source_tags={"p_hat": "S2", "e1_hat": "S1", "e2_hat": "S1"})


# --- full histogram multi-class -----------------------------------------------

def histogram_centred_values(comp_sums, alphas, k: int, p_vec, e_vec) -> np.ndarray:
    """sum_r (a_r - p_r)(sum_i l_r - k E_r) + sum_r p_r E_r over bags.

    ``comp_sums`` has shape (m, c): per-bag sums of the c loss components.
    """
    p_vec = np.asarray(p_vec, dtype=float)
    e_vec = np.asarray(e_vec, dtype=float)
    centred = (np.asarray(alphas) - p_vec) * (np.asarray(comp_sums) - k * e_vec)
    return centred.sum(axis=-1) + p_vec @ e_vec


def histogram_bag_loss_values(mloss: MulticlassLoss, h: Hypothesis, bags: BaggedDataset, p_vec, e_vec) -> np.ndarray:
    comps = mloss.components(bag_predictions(h, bags))
    return histogram_centred_values(comps.sum(axis=1), bags.aggregates, bags.bag_size, p_vec, e_vec)


def histogram_bag_loss(mloss: MulticlassLoss, h: Hypothesis, z: Bag, p_vec, e_vec) -> float:
    if not z.is_histogram:
        raise ConfigError("histogram_bag_loss needs a histogram aggregate")
    comps = mloss.components(bag_predictions(h, z))
    return float(histogram_centred_values(comps.sum(axis=0), z.aggregate, z.k, p_vec, e_vec))


def histogram_diff_bag_loss(mloss: MulticlassLoss, h1: Hypothesis, h2: Hypothesis, z: Bag,
                            est: ParamEstimates) -> float:
    d = mloss.components(bag_predictions(h1, z)) - mloss.components(bag_predictions(h2, z))
    return float(histogram_centred_values(d.sum(axis=0), z.aggregate, z.k, est.p_hat, est.e_hat))


def estimate_histogram_params(mloss: MulticlassLoss, h1: Hypothesis, h2: Hypothesis, S1: BaggedDataset,
                              S2: BaggedDataset, cfg: MomConfig) -> ParamEstimates:
    """Per-class median-of-means estimates: E[delta l_r] from S1, p_r from S2."""
    d = (mloss.components(bag_predictions(h1, S1)) - mloss.components(bag_predictions(h2, S1)))
    d = d.reshape(-1, mloss.num_classes)
    e_hat = np.array([mom(d[:, r], cfg) for r in range(mloss.num_classes)])
    p_hat = np.array([mom(S2.aggregates[:, r], cfg) for r in range(mloss.num_classes)])
    return ParamEstimates(p_hat, e_hat=e_hat, source_tags={"p_hat": "S2", "e_hat": "S1"})


# --- pairwise statistic -----------------------------------------------------

BINARY, HISTOGRAM_MODE, TOTAL = "binary", "histogram", "total"


class PairwiseQ:
    """Q(h1, h2; S) for every pair of a hypothesis list over one split dataset.

    Per-hypothesis loss values on S1 and per-bag sums on S3 are computed once;
    each pair then costs two or c+1 medians of means. The S3 partition is a
    function of ``cfg.partition_seed`` only, so Q(h2, h1) = -Q(h1, h2) exactly.
    """

    def __init__(self, loss, hypotheses: Sequence[Hypothesis], S: BaggedDataset, cfg: MomConfig,
                 mode: str = BINARY):
        if S.split_tags is None:
            raise ConfigError("Q needs a three-way split dataset")
        self.loss, self.cfg, self.mode = loss, cfg, mode
        self.hypotheses = list(hypotheses)
        S1, S2, S3 = S.split("S1"), S.split("S2"), S.split("S3")
        self.k = S.bag_size
        self.alpha3 = S3.aggregates
        if mode == HISTOGRAM_MODE:
            if not isinstance(loss, MulticlassLoss) or not S.is_histogram:
                raise ConfigError("histogram mode needs a MulticlassLoss and histogram bags")
            c = loss.num_classes
            self.p_hat = np.array([mom(S2.aggregates[:, r], cfg) for r in range(c)])
            self.s1 = [loss.components(bag_predictions(h, S1)).reshape(-1, c) for h in self.hypotheses]
            self.s3 = [loss.components(bag_predictions(h, S3)).sum(axis=1) for h in self.hypotheses]
        elif mode in (BINARY, TOTAL):
            if not isinstance(loss, DecomposedLoss) or S.is_histogram:
                raise ConfigError(f"{mode} mode needs a DecomposedLoss and scalar bags")
            if mode == TOTAL and not (loss.is_affine_total or loss.y_max == 1.0):
                raise ConfigError(f"loss {loss.name!r} is not affine in a count label")
            self.p_hat = float(np.mean(S2.aggregates))
            self.s1 = []
            for h in self.hypotheses:
                pred = bag_predictions(h, S1).ravel()
                self.s1.append((loss.f1(pred), loss.f2(pred)))
            self.s3 = [loss.f2(bag_predictions(h, S3)).sum(axis=1) for h in self.hypotheses]
        else:
            raise ConfigError(f"unknown mode {mode!r}")

    def estimates(self, i: int, j: int) -> ParamEstimates:
        if self.mode == HISTOGRAM_MODE:
            d = self.s1[i] - self.s1[j]
            e_hat = np.array([mom(d[:, r], self.cfg) for r in range(d.shape[1])])
            return ParamEstimates(self.p_hat, e_hat=e_hat, source_tags={"p_hat": "S2", "e_hat": "S1"})
        (a1, a2), (b1, b2) = self.s1[i], self.s1[j]
        return ParamEstimates(self.p_hat, mom(a1 - b1, self.cfg), mom(a2 - b2, self.cfg),
                              source_tags={"p_hat": "S2", "e1_hat": "S1", "e2_hat": "S1"})

    def bag_values(self, i: int, j: int, est: Optional[ParamEstimates] = None) -> np.ndarray:
        """Per-bag difference estimates over S3."""
        est = est or self.estimates(i, j)
        d = self.s3[i] - self.s3[j]
        if self.mode == HISTOGRAM_MODE:
            return histogram_centred_values(d, self.alpha3, self.k, est.p_hat, est.e_hat)
        return centred_bag_values(d, self.alpha3, self.k, est.p_hat, est.e1_hat, est.e2_hat)

    def q(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return mom(self.bag_values(i, j), self.cfg)

    def matrix(self) -> np.ndarray:
        """Antisymmetric matrix of Q over all pairs (upper triangle computed)."""
        n = len(self.hypotheses)
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = self.q(i, j)
                out[j, i] = -out[i, j]
        return out


def q_statistic(loss, h1: Hypothesis, h2: Hypothesis, S: BaggedDataset, cfg: MomConfig,
                mode: str = BINARY) -> float:
    """Median-of-means estimate of L(h1) - L(h2) over the S3 bags of ``S``."""
    return PairwiseQ(loss, [h1, h2], S, cfg, mode).q(0, 1)
