"""Client-side local training and the server's pseudo-gradient update."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataShard
from .errors import DivergenceError
from .models import SmallModel, cross_entropy

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LocalTrainConfig:
    learning_rate: float
    iterations: int
    batch_size: int = 64
    prox_mu: float = 0.0

    def __post_init__(self):
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.prox_mu < 0:
            raise ValueError(f"prox_mu must be >= 0, got {self.prox_mu}")


def local_train(model, global_params: np.ndarray, shard: DataShard, cfg: LocalTrainConfig,
                rng: np.random.Generator, client=None) -> tuple[np.ndarray, np.ndarray]:
    """Mini-batch SGD on one client's shard; returns ``(local, global - local)``.

    ``model`` only needs ``loss_and_grad(theta, X, y)``. With ``prox_mu > 0``
    the objective gains ``prox_mu / 2 * ||theta - global||^2``.
    """
    n = len(shard)
    if n == 0:
        raise ValueError(f"client {client}: empty training shard")
    theta = global_params.copy()
    bs = min(cfg.batch_size, n)
    order = rng.permutation(n)
    pos = 0
    for it in range(cfg.iterations):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        loss, grad = model.loss_and_grad(theta, shard.features[idx], shard.labels[idx])
        if cfg.prox_mu:
            diff = theta - global_params
            loss += 0.5 * cfg.prox_mu * float(diff @ diff)
            grad = grad + cfg.prox_mu * diff
        if not math.isfinite(loss):
            raise DivergenceError(f"client {client}: non-finite loss at local iteration {it}")
        theta = theta - cfg.learning_rate * grad
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(f"client {client}: non-finite parameters after local training")
    return theta, global_params - theta


def check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} aggregation weights, got {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"aggregation weights must be >= 0 and sum to 1, got {w}")
    return w


def server_update(global_params: np.ndarray, deltas: Sequence[np.ndarray], weights,
                  server_lr: float) -> np.ndarray:
    """``global - server_lr * sum_k weights[k] * deltas[k]``."""
    if not deltas:
        raise ValueError("no client updates")
    w = check_weights(weights, len(deltas))
    if not server_lr >= 0:
        raise ValueError(f"server_lr must be >= 0, got {server_lr}")
    agg = np.zeros_like(global_params)
    for wk, dk in zip(w, deltas):
        if dk.shape != global_params.shape:
            raise ValueError("pseudo-gradient shape does not match the global model")
        agg += wk * dk
    return global_params - server_lr * agg


def weighted_average(models: Sequence[np.ndarray], weights) -> np.ndarray:
    """Plain FedAvg aggregation of local models."""
    w = check_weights(weights, len(models))
    out = np.zeros_like(models[0])
    for wk, mk in zip(w, models):
        out += wk * mk
    return out


def evaluate(model: SmallModel, theta: np.ndarray, split: DataShard) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    probs = model.predict_proba(theta, split.features)
    return cross_entropy(probs, split.labels), float(np.mean(probs.argmax(axis=1) == split.labels))


def hyper_loss(val_losses) -> float:
    """Unweighted mean of per-client validation losses."""
    v = np.asarray(val_losses, dtype=float)
    if v.size == 0:
        raise ValueError("need at least one validation loss")
    if not np.all(np.isfinite(v)):
        raise DivergenceError(f"non-finite validation loss in {v.tolist()}")
    return float(v.mean())


def save_checkpoint(path, model: SmallModel, theta: np.ndarray, **meta) -> Path:
    """Flat vector plus layout manifest as JSON; floats round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": CHECKPOINT_VERSION,
        "model": {"kind": model.kind, "d_in": model.d_in, "classes": model.classes, "hidden": model.hidden},
        "layout": [[name, list(shape)] for name, shape in model.layout()],
        "values": [float(v) for v in theta],
        "meta": meta,
    }
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path) -> tuple[SmallModel, np.ndarray, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    model = SmallModel(**doc["model"])
    theta = np.asarray(doc["values"], dtype=float)
    if [[n, list(s)] for n, s in model.layout()] != doc["layout"] or theta.size != model.n_params:
        raise ValueError(f"{path}: layout manifest does not match the model")
    return model, theta, doc.get("meta", {})
