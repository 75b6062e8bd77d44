"""Small classifiers over flat parameter vectors with hand-written gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PROB_CLAMP = 1e-12


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs[np.arange(len(labels)), labels], PROB_CLAMP, 1.0)
    return float(-np.mean(np.log(p)))


@dataclass(frozen=True)
class SmallModel:
    """Softmax regression or a one-hidden-layer tanh MLP.

    Parameters live in one flat vector; :meth:`layout` names the slices.
    """

    kind: str
    d_in: int
    classes: int
    hidden: int = 16

    def __post_init__(self):
        if self.kind not in ("softmax-regression", "mlp-1-hidden"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.d_in < 1 or self.classes < 2 or self.hidden < 1:
            raise ValueError("need d_in >= 1, classes >= 2, hidden >= 1")

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.kind == "softmax-regression":
            return [("W", (self.classes, self.d_in)), ("b", (self.classes,))]
        return [
            ("W1", (self.hidden, self.d_in)), ("b1", (self.hidden,)),
            ("W2", (self.classes, self.hidden)), ("b2", (self.classes,)),
        ]

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for _, s in self.layout())

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        out, i = {}, 0
        for name, shape in self.layout():
            n = math.prod(shape)
            out[name] = theta[i : i + n].reshape(shape)
            i += n
        return out

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` per layer."""
        parts = []
        for name, shape in self.layout():
            fan_in = shape[1] if len(shape) == 2 else (self.d_in if name in ("b", "b1") else self.hidden)
            b = 1.0 / math.sqrt(fan_in)
            parts.append(rng.uniform(-b, b, math.prod(shape)))
        return np.concatenate(parts)

    def _forward(self, theta, X):
        p = self.unpack(theta)
        if self.kind == "softmax-regression":
            return softmax_rows(X @ p["W"].T + p["b"]), None, p
        hid = np.tanh(X @ p["W1"].T + p["b1"])
        return softmax_rows(hid @ p["W2"].T + p["b2"]), hid, p

    def predict_proba(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        return self._forward(theta, X)[0]

    def loss(self, theta, X, y) -> float:
        return cross_entropy(self.predict_proba(theta, X), y)

    def loss_and_grad(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        probs, hid, p = self._forward(theta, X)
        loss = cross_entropy(probs, y)
        d_logits = probs.copy()
        d_logits[np.arange(len(y)), y] -= 1.0
        d_logits /= len(y)
        if self.kind == "softmax-regression":
            return loss, np.concatenate([(d_logits.T @ X).ravel(), d_logits.sum(axis=0)])
        d_hid = (d_logits @ p["W2"]) * (1.0 - hid**2)
        return loss, np.concatenate([
            (d_hid.T @ X).ravel(), d_hid.sum(axis=0),
            (d_logits.T @ hid).ravel(), d_logits.sum(axis=0),
        ])
