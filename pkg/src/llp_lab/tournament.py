"""Median-of-means tournament over a finite hypothesis class, plus exact regret oracles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bagging import HISTOGRAM, SCALAR, sample_bagged, three_way_split
from .core import (
    ConfigError,
    DecomposedLoss,
    FiniteHypothesisClass,
    Hypothesis,
    LLPError,
    MulticlassLoss,
    BaggedDataset,
    SyntheticDistribution,
)
from .estimators import BINARY, HISTOGRAM_MODE, TOTAL, MomConfig, PairwiseQ


class EmptyPoolError(LLPError):
    """Every hypothesis was eliminated; carries the elimination log."""

    def __init__(self, eliminations, q_matrix=None):
        super().__init__(f"all hypotheses eliminated after {len(eliminations)} eliminations")
        self.eliminations = eliminations
        self.q_matrix = q_matrix


@dataclass(frozen=True)
class TournamentConfig:
    beta: float
    loss: object
    delta: float = 0.1
    mom: Optional[MomConfig] = None
    mode: str = BINARY

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ConfigError("beta must be a finite positive number")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if self.mode not in (BINARY, HISTOGRAM_MODE, TOTAL):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mom is None:
            object.__setattr__(self, "mom", MomConfig(delta=self.delta))


@dataclass
class TournamentResult:
    winner: str
    surviving_pool: list
    q_matrix: np.ndarray
    ids: list
    eliminations: list = field(default_factory=list)  # (eliminated, by, Q)

    def to_json(self) -> dict:
        return {
            "winner": self.winner,
            "surviving_pool": self.surviving_pool,
            "ids": self.ids,
            "q_matrix": self.q_matrix.tolist(),
            "eliminations": [list(e) for e in self.eliminations],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def eliminate(q_matrix: np.ndarray, ids: Sequence[str], beta: float):
    """Apply the elimination rule to a precomputed Q matrix.

    Pairs are visited in sorted id order. Every pair of the original class is
    evaluated, whether or not its members are still in the pool.
    Returns (pool ids in sorted order, elimination log).
    """
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    pool = set(ids)
    log = []
    for a_pos, i in enumerate(order):
        for j in order[a_pos + 1:]:
            q = float(q_matrix[i, j])
            if q > beta / 2 and ids[i] in pool:
                pool.discard(ids[i])
                log.append((ids[i], ids[j], q))
            elif q < -beta / 2 and ids[j] in pool:
                pool.discard(ids[j])
                log.append((ids[j], ids[i], q))
    return sorted(pool), log


def run_tournament(H: FiniteHypothesisClass, S: BaggedDataset, cfg: TournamentConfig) -> TournamentResult:
    """Pairwise elimination with threshold beta/2; the winner is the lowest surviving id."""
    ids = H.ids
    if len(H) == 1:
        return TournamentResult(ids[0], [ids[0]], np.zeros((1, 1)), ids)
    q = PairwiseQ(cfg.loss, list(H), S, cfg.mom, cfg.mode).matrix()
    pool, log = eliminate(q, ids, cfg.beta)
    if not pool:
        raise EmptyPoolError(log, q)
    return TournamentResult(pool[0], pool, q, ids, log)


def _label_values(dist: SyntheticDistribution) -> np.ndarray:
    return np.arange(dist.class_probs().shape[1], dtype=float)


def population_loss(dist: SyntheticDistribution, loss, h: Hypothesis) -> float:
    """Exact L(h) = sum_x P(x) sum_y P(y|x) loss(h(x), y) by enumeration."""
    if h.support_size != dist.size:
        raise ConfigError(f"hypothesis {h.id} is tabulated on {h.support_size} points, support has {dist.size}")
    probs = dist.class_probs()
    if isinstance(loss, MulticlassLoss):
        per_label = loss.components(h.table)
    elif isinstance(loss, DecomposedLoss):
        f1, f2 = loss.f1(h.table), loss.f2(h.table)
        per_label = f1[:, None] + _label_values(dist)[None, :] * f2[:, None]
    else:
        raise ConfigError("unsupported loss type")
    return float(dist.marginal @ np.sum(probs * per_label, axis=1))


def regret(dist: SyntheticDistribution, loss, H: FiniteHypothesisClass, h: Hypothesis) -> float:
    losses = [population_loss(dist, loss, g) for g in H]
    return max(0.0, population_loss(dist, loss, h) - min(losses))


def regrets(dist: SyntheticDistribution, loss, H: FiniteHypothesisClass) -> np.ndarray:
    losses = np.array([population_loss(dist, loss, g) for g in H])
    return losses - losses.min()


def draw_split(dist: SyntheticDistribution, k: int, m: int, seed, mode: str = BINARY) -> BaggedDataset:
    """3m i.i.d. bags of size k with a seeded three-way split."""
    rng = np.random.default_rng(seed)
    agg_mode = HISTOGRAM if mode == HISTOGRAM_MODE else SCALAR
    bags = sample_bagged(dist, k, 3 * m, rng, agg_mode)
    return three_way_split(bags, int(rng.integers(2**63 - 1)))


@dataclass
class ScalingRow:
    m: int
    achieved_beta: float
    success_rate: float
    mean_regret: float
    regret_quantiles: tuple  # (q50, q90)


@dataclass
class ScalingTable:
    rows: list
    slope: Optional[float]
    criterion: str

    def to_json(self) -> dict:
        return {
            "criterion": self.criterion,
            "slope": self.slope,
            "rows": [
                {"m": r.m, "achieved_beta": r.achieved_beta, "success_rate": r.success_rate,
                 "mean_regret": r.mean_regret, "regret_q50": r.regret_quantiles[0],
                 "regret_q90": r.regret_quantiles[1]}
                for r in self.rows
            ],
        }


def _pool_mask(q_matrix: np.ndarray, beta: float) -> np.ndarray:
    # h survives iff no pair flags it: max_j Q(h, j) <= beta / 2
    return q_matrix.max(axis=1) <= beta / 2


def _success(q_matrix, regs, beta) -> bool:
    mask = _pool_mask(q_matrix, beta)
    return bool(mask.any()) and bool(np.all(regs[mask] <= beta))


def _winner_regret(q_matrix, regs, ids, beta) -> float:
    mask = _pool_mask(q_matrix, beta)
    if not mask.any():
        return float("nan")
    alive = [i for i in np.flatnonzero(mask)]
    best = min(alive, key=lambda i: ids[i])
    return float(regs[best])


def regret_scaling_experiment(dist: SyntheticDistribution, loss, H: FiniteHypothesisClass, k: int,
                              m_grid: Sequence[int], trials: int, cfg: TournamentConfig, seed: int = 0,
                              criterion: str = "beta_search", beta_grid: Optional[np.ndarray] = None) -> ScalingTable:
    """Achieved regret as a function of the number of bags per split.

    ``beta_search``: for each m, the smallest beta on ``beta_grid`` such that
    at it, and at every larger grid value, at least a (1 - delta) fraction of
    trials end with a nonempty pool whose members all have regret <= beta.
    ``fixed``: success frequency and winner regret at ``cfg.beta``.
    The slope is a least-squares fit of log(achieved) on log(m).
    """
    if list(m_grid) != sorted(m_grid):
        raise ConfigError("m_grid must be increasing")
    if criterion not in ("beta_search", "fixed"):
        raise ConfigError(f"unknown criterion {criterion!r}")
    if beta_grid is None:
        beta_grid = np.geomspace(1e-6, 1.0, 241)
    regs = regrets(dist, loss, H)
    ids = H.ids
    rows = []
    for m in m_grid:
        qs = []
        for t in range(trials):
            S = draw_split(dist, k, m, [seed, m, t], cfg.mode)
            qs.append(PairwiseQ(loss, list(H), S, cfg.mom, cfg.mode).matrix())
        if criterion == "beta_search":
            ok = np.array([[_success(q, regs, b) for q in qs] for b in beta_grid]).mean(axis=1)
            good = ok >= 1.0 - cfg.delta
            # smallest beta above which the requirement holds throughout
            bad = np.flatnonzero(~good)
            start = 0 if bad.size == 0 else bad[-1] + 1
            achieved = float(beta_grid[start]) if start < beta_grid.size else float("nan")
            rate = float(ok[start]) if start < beta_grid.size else 0.0
            beta_eval = achieved
        else:
            beta_eval = cfg.beta
            rate = float(np.mean([_success(q, regs, beta_eval) for q in qs]))
        win = np.array([_winner_regret(q, regs, ids, beta_eval) for q in qs]) if math.isfinite(beta_eval) else np.array([np.nan])
        win = win[np.isfinite(win)]
        mean_win = float(win.mean()) if win.size else float("nan")
        quant = (float(np.quantile(win, 0.5)), float(np.quantile(win, 0.9))) if win.size else (float("nan"),) * 2
        if criterion == "fixed":
            achieved = mean_win
        rows.append(ScalingRow(int(m), achieved, rate, mean_win, quant))
    slope = None
    xs = np.array([r.m for r in rows], dtype=float)
    ys = np.array([r.achieved_beta for r in rows])
    ok = np.isfinite(ys) & (ys > 0)
    if ok.sum() >= 2:
        slope = float(np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)[0])
    return ScalingTable(rows, slope, criterion)
