"""Logit models with hand-written backward passes over a flat parameter vector."""

from __future__ import annotations

import numpy as np

from ..core import ConfigError

LINEAR = "linear"
MLP = "mlp"


class Model:
    """Logistic-linear or one-hidden-layer ReLU network emitting a logit.

    Parameters live in a single flat vector so optimizers and gradient
    checks see one array. Layout for ``mlp``: W1 (d*width), b1 (width),
    w2 (width), b2 (1). For ``linear``: w (d), b (1).
    """

    def __init__(self, kind: str, dim: int, width: int = 32, params=None):
        if kind not in (LINEAR, MLP):
            raise ConfigError(f"unknown model kind {kind!r}")
        self.kind, self.dim, self.width = kind, dim, width
        size = dim + 1 if kind == LINEAR else dim * width + 2 * width + 1
        if params is None:
            params = np.zeros(size)
        params = np.asarray(params, dtype=float)
        if params.shape != (size,):
            raise ConfigError(f"expected {size} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def init(cls, kind: str, dim: int, rng: np.random.Generator, width: int = 32) -> "Model":
        model = cls(kind, dim, width)
        if kind == LINEAR:
            model.params[:dim] = rng.normal(0.0, 0.01, dim)
        else:
            W1, b1, w2, _ = model._unpack(model.params)
            W1[...] = rng.normal(0.0, np.sqrt(2.0 / dim), W1.shape)
            w2[...] = rng.normal(0.0, np.sqrt(1.0 / width), w2.shape)
        return model

    def _unpack(self, params):
        d, w = self.dim, self.width
        W1 = params[: d * w].reshape(d, w)
        b1 = params[d * w: d * w + w]
        w2 = params[d * w + w: d * w + 2 * w]
        b2 = params[d * w + 2 * w:]
        return W1, b1, w2, b2

    @property
    def size(self) -> int:
        return self.params.size

    def forward(self, X, params=None):
        """Return (logits, cache) for a (n, d) feature matrix."""
        params = self.params if params is None else params
        X = np.asarray(X, dtype=float)
        if self.kind == LINEAR:
            return X @ params[:-1] + params[-1], (X,)
        W1, b1, w2, b2 = self._unpack(params)
        pre = X @ W1 + b1
        hidden = np.maximum(pre, 0.0)
        return hidden @ w2 + b2[0], (X, pre, hidden, w2)

    def logits(self, X, params=None) -> np.ndarray:
        return self.forward(X, params)[0]

    def backward(self, cache, dlogits) -> np.ndarray:
        """Gradient of sum(dlogits * logits) with respect to the flat parameters."""
        dlogits = np.asarray(dlogits, dtype=float).ravel()
        if self.kind == LINEAR:
            (X,) = cache
            return np.concatenate([X.T @ dlogits, [dlogits.sum()]])
        X, pre, hidden, w2 = cache
        dw2 = hidden.T @ dlogits
        db2 = dlogits.sum()
        dpre = np.outer(dlogits, w2) * (pre > 0)
        dW1 = X.T @ dpre
        db1 = dpre.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1, dw2, [db2]])
