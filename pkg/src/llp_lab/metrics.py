"""Instance-level metrics and Monte-Carlo diagnostics of the bag estimators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .bagging import HISTOGRAM, SCALAR, sample_bagged
from .core import CLAMP_EPS, ConfigError, Hypothesis, LLPError, MulticlassLoss, SyntheticDistribution
from .estimators import bag_loss_values, easyllp_bag_loss_values, histogram_bag_loss_values


class UndefinedMetricError(LLPError, ValueError):
    pass


def log_loss_metric(predictions, labels) -> float:
    """Mean binary log loss; predictions are clamped to [1e-7, 1 - 1e-7]."""
    q = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if q.size == 0:
        raise UndefinedMetricError("log loss of an empty sample")
    if q.shape != y.shape:
        raise ConfigError("predictions and labels differ in shape")
    q = np.clip(q, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return float(np.mean(-y * np.log(q) - (1.0 - y) * np.log1p(-q)))


def auc_metric(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2).

    Computed from the Mann-Whitney rank sum with midranks for ties.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class DiagnosticsRow:
    estimator: str
    k: int
    mean: float
    var: float
    se: float
    bound: float
    n_bags: int


@dataclass
class EstimatorDiagnostics:
    loss_name: str
    population_loss: float
    rows: list = field(default_factory=list)

    def for_estimator(self, name: str) -> list:
        return [r for r in self.rows if r.estimator == name]

    def row(self, name: str, k: int) -> DiagnosticsRow:
        for r in self.rows:
            if r.estimator == name and r.k == k:
                return r
        raise KeyError((name, k))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mean", "var", "se", "bound", "estimator_name"])
            for r in self.rows:
                w.writerow([r.k, repr(r.mean), repr(r.var), repr(r.se), repr(r.bound), r.estimator])


def exact_components(dist: SyntheticDistribution, loss, h: Hypothesis):
    """Population quantities the ideal estimators are allowed to know."""
    if isinstance(loss, MulticlassLoss):
        comps = loss.components(h.table)
        e_vec = comps.T @ dist.marginal
        p_vec = dist.class_marginal
        bound = 64.0 * dist.expect(np.max(comps, axis=1) ** 2)
        return {"p": p_vec, "e": e_vec, "bound": bound}
    f1, f2 = loss.f1(h.table), loss.f2(h.table)
    return {"p": dist.p, "e1": dist.expect(f1), "e2": dist.expect(f2), "bound": 2.5 * dist.expect(f2 ** 2)}


def _summarise(name, k, values, bound) -> DiagnosticsRow:
    n = values.size
    var = float(np.var(values, ddof=1)) if n > 1 else 0.0
    return DiagnosticsRow(name, k, float(np.mean(values)), var, float(np.sqrt(var / n)), bound, n)


def estimator_sweep(dist: SyntheticDistribution, loss, h: Hypothesis, k_grid: Sequence[int], n_bags: int,
                    seed: int, include_easyllp: bool = True, chunk_instances: int = 2_000_000) -> EstimatorDiagnostics:
    """Monte-Carlo mean and variance of the bag estimators at each bag size.

    The centred estimator gets the exact p, E[f1], E[f2] of ``dist``; the
    bound column is 2.5 E[f2^2] (binary) or 64 E[max_r l_r^2] (histogram),
    both computed exactly. EasyLLP rows, when requested, use the exact p.
    """
    from .tournament import population_loss

    histogram = isinstance(loss, MulticlassLoss)
    if histogram and dist.num_classes != loss.num_classes:
        raise ConfigError("loss and distribution disagree on the number of classes")
    exact = exact_components(dist, loss, h)
    diag = EstimatorDiagnostics(loss.name, population_loss(dist, loss, h))
    for k in k_grid:
        rng = np.random.default_rng([seed, int(k)])
        per_chunk = max(1, chunk_instances // int(k))
        centred, easy = [], []
        done = 0
        while done < n_bags:
            size = min(per_chunk, n_bags - done)
            bags = sample_bagged(dist, int(k), size, rng, HISTOGRAM if histogram else SCALAR)
            if histogram:
                centred.append(histogram_bag_loss_values(loss, h, bags, exact["p"], exact["e"]))
            else:
                centred.append(bag_loss_values(loss, h, bags, exact["p"], exact["e1"], exact["e2"]))
                if include_easyllp:
                    easy.append(easyllp_bag_loss_values(loss, h, bags, exact["p"]))
            done += size
        name = "histogram_bag_loss" if histogram else "bag_loss"
        diag.rows.append(_summarise(name, int(k), np.concatenate(centred), exact["bound"]))
        if easy:
            diag.rows.append(_summarise("easyllp", int(k), np.concatenate(easy), float("nan")))
    return diag
