"""Trainable bag losses on model logits: GeneralUPM, EasyLLP and PM.

Each ``*_objective`` takes logits of shape (B, k), the bag aggregates and
returns ``(values, grad)`` where ``values`` holds one loss per bag and
``grad`` is the derivative of ``values.mean()`` with respect to the logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import CLAMP_EPS, Bag, ConfigError
from ..estimators import centred_bag_values, easyllp_values
from ..losses import sigmoid, softplus
from .models import Model

GENERALUPM, EASYLLP, PM = "generalupm", "easyllp", "pm"
LLP_LOSSES = (GENERALUPM, EASYLLP, PM)


@dataclass(frozen=True)
class CrossEntropy:
    """Binary cross-entropy on a logit with optional label smoothing.

    With smoothing eps the target y becomes (1 - eps) y + eps / 2, giving
    f1(a) = softplus(a) - eps a / 2 and f2(a) = -(1 - eps) a.
    """

    smoothing: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("label smoothing must lie in [0, 1)")

    def target(self, y):
        return (1.0 - self.smoothing) * np.asarray(y, dtype=float) + self.smoothing / 2.0

    def f1(self, a):
        return softplus(a) - 0.5 * self.smoothing * a

    def f2(self, a):
        return -(1.0 - self.smoothing) * a

    def df1(self, a):
        return sigmoid(a) - 0.5 * self.smoothing

    def df2(self, a):
        return np.full_like(np.asarray(a, dtype=float), -(1.0 - self.smoothing))

    def on_logit(self, a, y):
        return self.f1(a) + np.asarray(y, dtype=float) * self.f2(a)

    def on_probability(self, q, y):
        """Loss of a probability q against label y (PM evaluates this at the bag mean)."""
        b = self.target(y)
        q = np.clip(q, CLAMP_EPS, 1.0 - CLAMP_EPS)
        return -b * np.log(q) - (1.0 - b) * np.log1p(-q)

    def d_probability(self, q, y):
        b = self.target(y)
        inside = (q >= CLAMP_EPS) & (q <= 1.0 - CLAMP_EPS)
        qc = np.clip(q, CLAMP_EPS, 1.0 - CLAMP_EPS)
        return np.where(inside, -b / qc + (1.0 - b) / (1.0 - qc), 0.0)


def pm_objective(logits, alphas, base: CrossEntropy):
    logits = np.asarray(logits, dtype=float)
    B, k = logits.shape
    s = sigmoid(logits)
    q = s.mean(axis=1)
    values = base.on_probability(q, alphas)
    dq = base.d_probability(q, alphas)
    grad = (dq / (B * k))[:, None] * s * (1.0 - s)
    return values, grad


def easyllp_objective(logits, alphas, p: float, base: CrossEntropy):
    logits = np.asarray(logits, dtype=float)
    B, k = logits.shape
    alphas = np.asarray(alphas, dtype=float)
    values = easyllp_values(base.f1(logits), base.f2(logits), alphas, p)
    coef2 = p / k + (alphas - p)
    grad = (base.df1(logits) / k + coef2[:, None] * base.df2(logits)) / B
    return values, grad


def generalupm_objective(logits, alphas, p: float, base: CrossEntropy, stop_grad_estimates: bool = False):
    """Centred bag loss with E[f1], E[f2] estimated on the other B - 1 bags.

    Each bag gets its own leave-one-bag-out means, so its estimates are
    independent of its own members.
    """
    logits = np.asarray(logits, dtype=float)
    B, k = logits.shape
    if B < 2:
        raise ConfigError("GeneralUPM needs at least two bags per batch")
    alphas = np.asarray(alphas, dtype=float)
    F1, F2 = base.f1(logits), base.f2(logits)
    s1, s2 = F1.sum(axis=1), F2.sum(axis=1)
    others = (B - 1) * k
    e1 = (s1.sum() - s1) / others
    e2 = (s2.sum() - s2) / others
    values = centred_bag_values(s2, alphas, k, p, e1, e2)
    grad = (alphas - p)[:, None] * base.df2(logits)
    if not stop_grad_estimates:
        # bag b's estimates read every other bag c with weight 1/others;
        # its E[f2] coefficient is p - k(alpha_b - p)
        w = p - k * (alphas - p)
        w_others = w.sum() - w
        grad = grad + ((B - 1) * base.df1(logits) + w_others[:, None] * base.df2(logits)) / others
    return values, grad / B


def objective(name: str, logits, alphas, p: float, base: CrossEntropy, stop_grad_estimates: bool = False):
    if name == GENERALUPM:
        return generalupm_objective(logits, alphas, p, base, stop_grad_estimates)
    if name == EASYLLP:
        return easyllp_objective(logits, alphas, p, base)
    if name == PM:
        return pm_objective(logits, alphas, base)
    raise ConfigError(f"unknown LLP loss {name!r}; expected one of {LLP_LOSSES}")


def _stack(model: Model, bags: Sequence[Bag]):
    k = bags[0].k
    if any(b.k != k for b in bags):
        raise ConfigError("all bags in a batch must share k")
    X = np.concatenate([b.members for b in bags])
    alphas = np.array([b.aggregate for b in bags], dtype=float)
    logits, cache = model.forward(X)
    return logits.reshape(len(bags), k), cache, alphas


def pm_loss(model: Model, z: Bag, base: CrossEntropy):
    """(value, parameter gradient) of the PM loss on one bag."""
    logits, cache, alphas = _stack(model, [z])
    values, g = pm_objective(logits, alphas, base)
    return float(values[0]), model.backward(cache, g.ravel())


def easyllp_loss(model: Model, z: Bag, p: float, base: CrossEntropy):
    logits, cache, alphas = _stack(model, [z])
    values, g = easyllp_objective(logits, alphas, p, base)
    return float(values[0]), model.backward(cache, g.ravel())


def generalupm_loss(model: Model, batch: Sequence[Bag], p: float, base: CrossEntropy,
                    stop_grad_estimates: bool = False):
    """Per-bag GeneralUPM values and the parameter gradient of their mean."""
    logits, cache, alphas = _stack(model, list(batch))
    values, g = generalupm_objective(logits, alphas, p, base, stop_grad_estimates)
    return values, model.backward(cache, g.ravel())
