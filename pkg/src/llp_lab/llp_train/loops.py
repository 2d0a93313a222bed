"""Batch and online (progressive validation) training loops, and the learning-rate sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..bagging import BaggingConfig, LabeledDataset, make_bags
from ..core import ConfigError, LLPError
from ..losses import sigmoid
from ..metrics import UndefinedMetricError, auc_metric, log_loss_metric
from .bag_losses import GENERALUPM, LLP_LOSSES, CrossEntropy, objective
from .models import LINEAR, Model
from .optim import make_optimizer

log = logging.getLogger(__name__)

LR_GRID = np.logspace(-7, -1, 16)


class SweepError(LLPError):
    """Every learning rate of a sweep diverged."""


@dataclass(frozen=True)
class TrainConfig:
    llp_loss: str = GENERALUPM
    bag_size: int = 16
    smoothing: float = 0.1
    batch_examples: int = 4096
    epochs: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    model: str = LINEAR
    width: int = 32
    stop_grad_estimates: bool = False

    def __post_init__(self):
        if self.llp_loss not in LLP_LOSSES:
            raise ConfigError(f"unknown LLP loss {self.llp_loss!r}")
        if self.bag_size < 1:
            raise ConfigError("bag size must be >= 1")
        if self.batch_examples < 2 * self.bag_size:
            raise ConfigError("batch_examples must hold at least two bags")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning rate must be a finite non-negative number")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    @property
    def bags_per_batch(self) -> int:
        return self.batch_examples // self.bag_size


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    params: np.ndarray
    optimizer: dict
    epoch: int = 0
    chunk: int = 0
    p_hat: Optional[float] = None
    history: list = field(default_factory=list)
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "params": [float(v) for v in self.params],
            "optimizer": self.optimizer,
            "epoch": self.epoch,
            "chunk": self.chunk,
            "p_hat": self.p_hat,
            "history": list(self.history),
            "diverged": self.diverged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(np.asarray(d["params"], dtype=float), d["optimizer"], d["epoch"], d["chunk"],
                   d["p_hat"], list(d["history"]), d.get("diverged", False))


@dataclass
class TrainResult:
    state: TrainState
    best_log_loss: float
    best_step: Optional[int]

    @property
    def history(self) -> list:
        return self.state.history


def evaluate(model: Model, X, y) -> tuple[float, float]:
    """Instance-level (log loss, AUC) on labelled data; AUC is nan for single-class data."""
    q = sigmoid(model.logits(X))
    ll = log_loss_metric(q, y)
    try:
        auc = auc_metric(q, y)
    except UndefinedMetricError:
        auc = float("nan")
    return ll, auc


def _batches(order: np.ndarray, per_batch: int, min_bags: int) -> list:
    chunks = [order[i:i + per_batch] for i in range(0, order.size, per_batch)]
    if len(chunks) > 1 and chunks[-1].size < min_bags:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _run_pass(model, opt, X_bags, alphas, order, cfg: TrainConfig, p: float, base: CrossEntropy) -> bool:
    """One pass over the bags in ``order``; returns False on a non-finite loss."""
    k, d = X_bags.shape[1], X_bags.shape[2]
    min_bags = 2 if cfg.llp_loss == GENERALUPM else 1
    if order.size < min_bags:
        raise ConfigError(f"{cfg.llp_loss} needs at least {min_bags} bags, got {order.size}")
    for rows in _batches(order, cfg.bags_per_batch, min_bags):
        logits, cache = model.forward(X_bags[rows].reshape(-1, d))
        values, g = objective(cfg.llp_loss, logits.reshape(rows.size, k), alphas[rows], p, base,
                              cfg.stop_grad_estimates)
        if not np.all(np.isfinite(values)):
            return False
        grad = model.backward(cache, g.ravel())
        if not np.all(np.isfinite(grad)):
            return False
        opt.step(model.params, grad)
    return True


def _new_state(cfg: TrainConfig, dim: int) -> tuple[Model, object, TrainState]:
    model = Model.init(cfg.model, dim, np.random.default_rng([cfg.seed, 0]), cfg.width)
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate, model.size)
    return model, opt, TrainState(model.params, opt.state_dict())


def _restore(cfg: TrainConfig, dim: int, state: TrainState):
    model = Model(cfg.model, dim, cfg.width, state.params.copy())
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate, model.size)
    opt.load_state_dict(state.optimizer)
    return model, opt


def _record(cfg, step, ll, auc) -> dict:
    return {"step": step, "loss_name": cfg.llp_loss, "k": cfg.bag_size, "lr": cfg.learning_rate,
            "seed": cfg.seed, "log_loss": ll, "auc": auc}


def train_batch(data: LabeledDataset, cfg: TrainConfig, test: LabeledDataset,
                state: Optional[TrainState] = None) -> TrainResult:
    """Multi-epoch LLP training on fixed bags.

    Bags are formed once from the seed; each epoch only reshuffles their
    order. p is the mean bag aggregate over the whole training set. After
    every epoch the instance-level test log loss and AUC are recorded.
    Passing a saved ``state`` continues from its epoch.
    """
    if data.num_classes != 2:
        raise ConfigError("SGD training supports binary labels only")
    bags = make_bags(data, BaggingConfig(cfg.bag_size, cfg.seed))
    X_bags = bags.member_features()
    alphas = bags.aggregates
    p = float(alphas.mean())
    base = CrossEntropy(cfg.smoothing)
    if state is None:
        model, opt, state = _new_state(cfg, data.dimension)
        state.p_hat = p
    else:
        model, opt = _restore(cfg, data.dimension, state)
        state = TrainState(model.params, state.optimizer, state.epoch, state.chunk, state.p_hat,
                           list(state.history), state.diverged)
    while state.epoch < cfg.epochs and not state.diverged:
        epoch = state.epoch + 1
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(bags))
        ok = _run_pass(model, opt, X_bags, alphas, order, cfg, p, base)
        state.epoch = epoch
        state.optimizer = opt.state_dict()
        if not ok:
            state.diverged = True
            log.warning("run diverged at epoch %d (loss=%s k=%d lr=%g)", epoch, cfg.llp_loss,
                        cfg.bag_size, cfg.learning_rate)
            state.history.append(_record(cfg, epoch, float("nan"), float("nan")))
            break
        ll, auc = evaluate(model, test.features, test.labels)
        state.history.append(_record(cfg, epoch, ll, auc))
    return _finish(state)


def _finish(state: TrainState) -> TrainResult:
    losses = [r["log_loss"] for r in state.history if math.isfinite(r["log_loss"])]
    if not losses:
        return TrainResult(state, float("nan"), None)
    best = min(range(len(state.history)),
               key=lambda i: state.history[i]["log_loss"] if math.isfinite(state.history[i]["log_loss"]) else math.inf)
    return TrainResult(state, state.history[best]["log_loss"], state.history[best]["step"])


def train_online(stream: LabeledDataset, cfg: TrainConfig, chunk_size: int = 65536,
                 p_mode: str = "chunk") -> TrainResult:
    """Progressive validation over consecutive chunks.

    Each chunk is first scored with the current parameters, then shuffled
    into bags and used for one pass of updates. ``p_mode="chunk"`` estimates
    p from the chunk's bags; ``"global"`` uses the mean over all chunks' bags.
    """
    if p_mode not in ("chunk", "global"):
        raise ConfigError("p_mode must be 'chunk' or 'global'")
    if chunk_size < 1:
        raise ConfigError("chunk_size must be >= 1")
    base = CrossEntropy(cfg.smoothing)
    model, opt, state = _new_state(cfg, stream.dimension)
    starts = range(0, len(stream), chunk_size)
    chunk_bags = []
    for c, start in enumerate(starts):
        chunk = stream.take(np.arange(start, min(start + chunk_size, len(stream))))
        if len(chunk) < cfg.bag_size:
            log.warning("chunk %d has %d examples, fewer than k=%d; skipped", c, len(chunk), cfg.bag_size)
            chunk_bags.append(None)
            continue
        chunk_bags.append((chunk, make_bags(chunk, BaggingConfig(cfg.bag_size, hash_seed(cfg.seed, 2, c)))))
    all_alphas = [b.aggregates for entry in chunk_bags if entry is not None for b in [entry[1]]]
    global_p = float(np.concatenate(all_alphas).mean()) if all_alphas else float("nan")
    for c, entry in enumerate(chunk_bags):
        if entry is None:
            continue
        chunk, bags = entry
        ll, auc = evaluate(model, chunk.features, chunk.labels)
        p = float(bags.aggregates.mean()) if p_mode == "chunk" else global_p
        state.p_hat = p
        rec = _record(cfg, c, ll, auc)
        rec["p_hat"] = p
        state.history.append(rec)
        if state.diverged:
            continue
        order = np.random.default_rng([cfg.seed, 3, c]).permutation(len(bags))
        min_bags = 2 if cfg.llp_loss == GENERALUPM else 1
        if order.size < min_bags:
            log.warning("chunk %d has a single bag; no update", c)
            continue
        if not _run_pass(model, opt, bags.member_features(), bags.aggregates, order, cfg, p, base):
            state.diverged = True
        state.chunk = c + 1
        state.optimizer = opt.state_dict()
    result = _finish(state)
    mean = mean_chunk_log_loss(state.history)
    return TrainResult(result.state, mean, None)


def hash_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def mean_chunk_log_loss(history: Sequence[dict]) -> float:
    vals = [r["log_loss"] for r in history]
    if not vals or not all(math.isfinite(v) for v in vals):
        return float("nan")
    return float(np.mean(vals))


@dataclass
class SweepResult:
    best_lr: float
    best_metric: float
    metrics: dict  # lr -> metric (nan when diverged)
    results: dict  # lr -> TrainResult


def lr_sweep(train: LabeledDataset, cfg_template: TrainConfig, test: Optional[LabeledDataset] = None,
             grid: Sequence[float] = LR_GRID, mode: str = "batch", chunk_size: int = 65536,
             runner: Optional[Callable] = None) -> SweepResult:
    """Train once per learning rate and keep the lowest test log loss.

    Batch mode scores a run by its best epoch; online mode by the mean chunk
    log loss. Selection is on the test metric itself, so the reported value
    is optimistic.
    """
    if mode == "batch" and test is None:
        raise ConfigError("batch sweeps need a test set")
    results, metrics = {}, {}
    for lr in grid:
        cfg = replace(cfg_template, learning_rate=float(lr))
        if runner is not None:
            res = runner(cfg)
        elif mode == "batch":
            res = train_batch(train, cfg, test)
        elif mode == "online":
            res = train_online(train, cfg, chunk_size)
        else:
            raise ConfigError(f"unknown sweep mode {mode!r}")
        results[float(lr)] = res
        metrics[float(lr)] = res.best_log_loss if not res.state.diverged or mode == "batch" else float("nan")
    finite = {lr: v for lr, v in metrics.items() if math.isfinite(v)}
    if not finite:
        raise SweepError("every learning rate diverged")
    best_lr = min(finite, key=finite.get)
    return SweepResult(best_lr, finite[best_lr], metrics, results)
