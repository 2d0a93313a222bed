"""Reference synthetic problems used by the CLI defaults and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .core import FiniteHypothesisClass, Hypothesis, SyntheticDistribution


def three_point_task():
    """Binary distribution on three points and one fixed probability predictor."""
    dist = SyntheticDistribution(np.array([[0.0], [1.0], [2.0]]), [0.3, 0.5, 0.2], [0.1, 0.5, 0.85])
    return dist, Hypothesis([0.2, 0.45, 0.7], "h")


def three_class_task():
    probs = np.array([[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6]])
    dist = SyntheticDistribution(np.array([[0.0], [1.0], [2.0]]), [0.3, 0.4, 0.3], probs)
    pred = np.array([[0.6, 0.25, 0.15], [0.3, 0.4, 0.3], [0.2, 0.2, 0.6]])
    return dist, Hypothesis(pred, "h", kind="simplex")


def tournament_task():
    """Realizable square-loss problem: h0 is the regression function, the rest have regret >= 0.2."""
    eta = np.array([0.1, 0.35, 0.65, 0.9])
    dist = SyntheticDistribution(np.arange(4.0)[:, None], np.full(4, 0.25), eta)
    tables = [
        eta,
        np.clip(eta + 0.6, 0.0, 1.0),
        np.clip(eta - 0.6, 0.0, 1.0),
        1.0 - eta,
        0.5 + np.array([0.45, 0.45, -0.45, -0.45]),
    ]
    return dist, FiniteHypothesisClass([Hypothesis(t, f"h{i}") for i, t in enumerate(tables)])


def scaling_task(rho: float, size: int = 16, count: int = 24, max_excess: float = 0.05, seed: int = 5):
    """Square-loss class with regrets spread over several decades.

    Each hypothesis is eta + r_i u_i with its own random sign pattern u_i.
    rho = 0 puts eta itself in the class (realizable); rho > 0 keeps every
    hypothesis at least rho away from eta in every coordinate.
    """
    rng = np.random.default_rng(seed)
    eta = np.linspace(0.35, 0.65, size)
    dist = SyntheticDistribution(np.arange(float(size))[:, None], np.full(size, 1.0 / size), eta)
    signs = rng.choice([-1.0, 1.0], size=(count + 1, size))
    tables = [eta + rho * signs[0]]
    for i, extra in enumerate(np.geomspace(1e-5, max_excess, count)):
        tables.append(eta + np.sqrt(rho ** 2 + extra) * signs[i + 1])
    hyps = [Hypothesis(np.clip(t, 0.0, 1.0), f"h{i:02d}") for i, t in enumerate(tables)]
    return dist, FiniteHypothesisClass(hyps)
