"""Loss families on top of the (f1, f2) decomposition.

Includes the extended loss with real-valued second argument, label
smoothing through that extension, and an empirical scan of the quadratic
sandwich ratios under a bounded-logit parameterisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import ConfigError, DecomposedLoss, instance_loss


def sigmoid(a):
    return expit(a)


def softplus(a):
    return np.logaddexp(0.0, a)


@dataclass(frozen=True)
class LogitModel:
    """Linear logit with sigmoid link: h(x) = sigmoid(w.x + b)."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ConfigError("logit model parameters must be finite")
        object.__setattr__(self, "weights", w)

    def logit(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.weights + self.bias

    def predict(self, x) -> np.ndarray:
        return sigmoid(self.logit(x))


def extended_loss(loss: DecomposedLoss, a, b):
    """f1(a) + b * f2(a) with b ranging over [0, y_max] instead of labels."""
    b_arr = np.asarray(b, dtype=float)
    if np.any(b_arr < 0) or np.any(b_arr > loss.y_max):
        raise ConfigError(f"second argument must lie in [0, {loss.y_max}]")
    out = loss.f1(a) + b_arr * loss.f2(a)
    return float(out) if np.ndim(out) == 0 else out


def smooth_label_loss(loss: DecomposedLoss, prediction, label, epsilon: float):
    """Loss against the smoothed target (1 - eps) * y + eps / 2.

    The data labels are untouched; only the loss definition changes.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError("epsilon must lie in [0, 1)")
    if epsilon == 0.0:
        return instance_loss(loss, prediction, label)
    target = (1.0 - epsilon) * np.asarray(label, dtype=float) + epsilon / 2.0
    return extended_loss(loss, prediction, target)


@dataclass
class SandwichReport:
    loss_name: str
    grid: np.ndarray  # (n_pairs, 2) columns a, b
    ratios: dict  # i -> array of ratios over retained pairs (nan where skipped)
    skipped: dict  # i -> array of (a, b) pairs where f_i(a) == f_i(b)
    lower: dict = field(default_factory=dict)
    upper: dict = field(default_factory=dict)

    def implied_constants(self, i: int) -> tuple[float, float]:
        """(c_i, C_i): the tightest constants consistent with the grid."""
        return self.lower[i], self.upper[i]


def sandwich_scan(loss: DecomposedLoss, logit_bound: float = 4.0, count: int = 101) -> SandwichReport:
    """Evaluate (lbar(a,b) - lbar(b,b)) / ((f_i(a) - f_i(b))^2 / 2) on a grid.

    a and b both range over sigmoid(linspace(-logit_bound, logit_bound, count)).
    Pairs with f_i(a) == f_i(b) are skipped and listed in ``skipped[i]``.
    """
    if logit_bound < 0 or count < 1:
        raise ConfigError("logit_bound must be >= 0 and count >= 1")
    pts = sigmoid(np.linspace(-logit_bound, logit_bound, count))
    a, b = np.meshgrid(pts, pts, indexing="ij")
    a, b = a.ravel(), b.ravel()
    # differences of nearby grid points lose ~1e-11 to cancellation in float64
    a_x, b_x = a.astype(np.longdouble), b.astype(np.longdouble)
    gap = (loss.f1(a_x) - loss.f1(b_x)) + b_x * (loss.f2(a_x) - loss.f2(b_x))
    ratios, skipped, lower, upper = {}, {}, {}, {}
    for i, f in ((1, loss.f1), (2, loss.f2)):
        half_sq = 0.5 * (f(a_x) - f(b_x)) ** 2
        ok = half_sq > 0
        r = np.full(a.shape, np.nan)
        r[ok] = (gap[ok] / half_sq[ok]).astype(float)
        ratios[i] = r
        skipped[i] = np.column_stack([a[~ok], b[~ok]])
        lower[i] = float(np.min(r[ok])) if ok.any() else float("nan")
        upper[i] = float(np.max(r[ok])) if ok.any() else float("nan")
    return SandwichReport(loss.name, np.column_stack([a, b]), ratios, skipped, lower, upper)
