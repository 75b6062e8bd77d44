"""Round loop: broadcast, local training, server update, validation, RL update.

Clients own their data. The :class:`Server` is only ever handed parameter
vectors, pseudo-gradients and scalar validation losses.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as datasim
from .agent import Agent, compute_reward
from .config import AW_GROUP, ExperimentConfig
from .errors import DivergenceError, FedHPOError
from .fl import LocalTrainConfig, evaluate, hyper_loss, local_train, save_checkpoint, server_update
from .models import SmallModel
from .records import RoundCsvWriter, RoundRecord
from .space import SIMPLEX, HyperparamSample, HyperparamSpace

log = logging.getLogger(__name__)

WORKERS_ENV = "FEDHPO_WORKERS"

# SeedSequence stream tags
_DATA, _PARTITION, _SPLIT, _SHIFT, _INIT, _SAMPLER, _MLP, _CLIENT, _LOCAL_ONLY = range(9)


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _seed_int(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


class Client:
    def __init__(self, cid: int, train, val, test):
        self.cid = cid
        self.train, self.val, self.test = train, val, test

    @property
    def n_train(self) -> int:
        return len(self.train)

    def local_update(self, model, global_params, cfg: LocalTrainConfig, rng) -> np.ndarray:
        """Train on the local shard; only the pseudo-gradient leaves the client."""
        _, delta = local_train(model, global_params, self.train, cfg, rng, client=self.cid)
        return delta

    def validate(self, model, theta) -> tuple[float, float]:
        return evaluate(model, theta, self.val)

    def test_eval(self, model, theta) -> tuple[float, float]:
        return evaluate(model, theta, self.test)


class Server:
    def __init__(self, theta: np.ndarray, agent: Agent | None = None):
        self.theta = theta
        self.agent = agent

    def aggregate(self, deltas, weights, server_lr: float) -> np.ndarray:
        self.theta = server_update(self.theta, deltas, weights, server_lr)
        if not np.all(np.isfinite(self.theta)):
            raise DivergenceError("non-finite global model after server update")
        return self.theta

    def rl_update(self, q: int, sample: HyperparamSample, prev_loss: float, new_loss: float) -> float:
        reward = compute_reward(prev_loss, new_loss)
        self.agent.record_round(q, sample, reward)
        self.agent.step()
        self.agent.prev_hyper_loss = new_loss
        return reward


@dataclass
class Federation:
    model: SmallModel
    clients: list[Client]
    classes: int

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.n_train for c in self.clients], dtype=float)


def build_federation(cfg: ExperimentConfig) -> Federation:
    d = cfg.data
    if d.source == "csv":
        dataset = datasim.load_csv(d.csv_path, d.label_column)
        classes = int(dataset.labels.max()) + 1
    else:
        spec = datasim.SyntheticSpec(
            n_samples=d.n_samples, d_in=d.d_in, classes=d.classes,
            cluster_spread=d.cluster_spread, separation=d.separation,
            seed=_seed_int(cfg.seed, _DATA),
        ).validate(cfg.clients)
        dataset = datasim.generate(spec)
        classes = d.classes
    min_size = d.min_client_samples
    if d.partition == "dirichlet":
        shards = datasim.partition_dirichlet(dataset, cfg.clients, d.dirichlet_alpha,
                                             _seed_int(cfg.seed, _PARTITION), min_size)
    else:
        shards = datasim.partition_sizes(dataset, d.client_fractions, _seed_int(cfg.seed, _PARTITION), min_size)
    offsets = datasim.apply_domain_shift(shards, d.domain_shift, _rng(cfg.seed, _SHIFT))
    clients = []
    for k, (shard, off) in enumerate(zip(shards, offsets)):
        shard = datasim.DataShard(shard.features + off, shard.labels)
        tr, va, te = datasim.split(shard, d.split, _seed_int(cfg.seed, _SPLIT, k))
        clients.append(Client(k, tr, va, te))
    model = SmallModel(cfg.model.kind, dataset.features.shape[1], classes, cfg.model.hidden)
    return Federation(model, clients, classes)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _fan_out(fn, items):
    n = _workers()
    if n == 1 or len(items) == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def resolve_hyperparams(cfg: ExperimentConfig, raw: dict[str, float] | None, sizes: np.ndarray) -> dict:
    """Effective per-round hyperparameters: searched values override fixed ones.

    Aggregation weights default to data-size proportions when not searched.
    """
    raw = raw or {}
    f = cfg.fixed
    h: dict[str, float] = {"lr": float(raw.get("lr", f.lr))}
    if "local_iters" in raw or ("local_epochs" not in raw and f.local_iters > 0):
        h["local_iters"] = int(raw.get("local_iters", f.local_iters))
    else:
        h["local_epochs"] = int(raw.get("local_epochs", f.local_epochs))
    h["server_lr"] = float(raw.get("server_lr", f.server_lr))
    aw_keys = [f"{AW_GROUP}[{k}]" for k in range(len(sizes))]
    if all(k in raw for k in aw_keys):
        weights = [float(raw[k]) for k in aw_keys]
    else:
        weights = (sizes / sizes.sum()).tolist()
    for k, w in zip(aw_keys, weights):
        h[k] = w
    return h


def _iterations(h: dict, n_train: int, batch_size: int) -> int:
    if "local_iters" in h:
        return h["local_iters"]
    return h["local_epochs"] * math.ceil(n_train / batch_size)


def policy_snapshot(space: HyperparamSpace, params) -> tuple[dict, dict]:
    """Policy mean and spread in raw units.

    Spread is half the raw width of ``mu +/- sigma``; for aggregation
    weights it is the softmax delta-method ``w (1 - w) sigma``.
    """
    mu_raw = space.to_raw(params.mu, rounded=False)
    sig = params.sigma
    sigma_raw = {}
    for i, d in enumerate(space.dims):
        if d.kind == SIMPLEX:
            w = mu_raw[d.name]
            sigma_raw[d.name] = w * (1.0 - w) * float(sig[i])
        else:
            lo, hi = space.clip(np.array([params.mu[i] - sig[i], params.mu[i] + sig[i]]))
            lo, hi = float(d.denormalize(lo, space.scale)), float(d.denormalize(hi, space.scale))
            sigma_raw[d.name] = 0.5 * (hi - lo)
    return {d.name: mu_raw[d.name] for d in space.dims}, sigma_raw


@dataclass
class RunResult:
    records: list[RoundRecord]
    summary: dict
    theta: np.ndarray
    agent: Agent | None = None


def _nan_record(q, prev_loss, h, snapshot, n_clients):
    mu, sigma = snapshot if snapshot else (None, None)
    nans = [math.nan] * n_clients
    return RoundRecord(q, math.nan, prev_loss, math.nan, math.nan, nans, list(nans), h, mu, sigma)


def _run_loop(cfg: ExperimentConfig, kind: str, out_dir: Path | None, plots: bool = False) -> RunResult:
    fed = build_federation(cfg)
    model, clients = fed.model, fed.clients
    theta = model.init(_rng(cfg.seed, _INIT))
    agent = space = sample = None
    prox_mu = 0.0
    if kind == "auto":
        space = cfg.build_space()
        agent = Agent(space, cfg.agent, _rng(cfg.seed, _MLP))
        sampler = _rng(cfg.seed, _SAMPLER)
    elif kind == "fedprox":
        prox_mu = cfg.fixed.prox_mu
    server = Server(theta, agent)

    val = [c.validate(model, server.theta) for c in clients]
    prev_loss = hyper_loss([v[0] for v in val])
    if agent is not None:
        agent.prev_hyper_loss = prev_loss
        sample = agent.next_hyperparams(sampler)

    writer = RoundCsvWriter(out_dir / "rounds.csv") if out_dir else None
    timings = []
    records: list[RoundRecord] = []
    best = (math.inf, 0, None)
    try:
        for q in range(1, cfg.rounds + 1):
            snapshot = policy_snapshot(space, agent.params) if agent else None
            if agent:
                h = resolve_hyperparams(cfg, sample.raw, fed.sizes)
            else:
                h = resolve_hyperparams(cfg, None, fed.sizes)
                if kind in ("fedavg", "fedprox"):
                    h["server_lr"] = 1.0
            weights = [h[f"{AW_GROUP}[{k}]"] for k in range(len(clients))]
            t0 = time.perf_counter()
            try:
                def job(c, theta=server.theta):
                    ltc = LocalTrainConfig(h["lr"], _iterations(h, c.n_train, cfg.model.batch_size),
                                           cfg.model.batch_size, prox_mu)
                    return c.local_update(model, theta, ltc, _rng(cfg.seed, _CLIENT, c.cid, q))
                deltas = _fan_out(job, clients)
                t1 = time.perf_counter()
                server.aggregate(deltas, weights, h["server_lr"])
                t2 = time.perf_counter()
                val = [c.validate(model, server.theta) for c in clients]
                new_loss = hyper_loss([v[0] for v in val])
                t3 = time.perf_counter()
                if agent:
                    reward = server.rl_update(q, sample, prev_loss, new_loss)
                else:
                    reward = compute_reward(prev_loss, new_loss)
                t4 = time.perf_counter()
            except FedHPOError:
                rec = _nan_record(q, prev_loss, h, snapshot, len(clients))
                records.append(rec)
                if writer:
                    writer.append(rec)
                raise
            test_acc = float(np.mean([c.test_eval(model, server.theta)[1] for c in clients]))
            mu, sigma = snapshot if snapshot else (None, None)
            rec = RoundRecord(q, reward, prev_loss, new_loss, test_acc,
                              [v[0] for v in val], [v[1] for v in val], h, mu, sigma)
            records.append(rec)
            if writer:
                writer.append(rec)
            timings.append((q, t1 - t0, t2 - t1, t3 - t2, t4 - t3))
            if new_loss < best[0]:
                best = (new_loss, q, server.theta.copy())
                if out_dir:
                    save_checkpoint(out_dir / "checkpoints" / "best.json", model, server.theta, round=q)
            prev_loss = new_loss
            if agent and q < cfg.rounds:
                sample = agent.next_hyperparams(sampler)
            log.info("round %d: hyper_loss=%.5f reward=%+.5f test_acc=%.4f", q, new_loss, reward, test_acc)
    finally:
        if writer:
            writer.close()
        if out_dir:
            _write_timings(out_dir / "timings.csv", timings)

    final_acc = [c.test_eval(model, server.theta)[1] for c in clients]
    best_acc = [c.test_eval(model, best[2])[1] for c in clients]
    summary = {
        "name": cfg.name,
        "method": kind if kind != "auto" else f"auto-{cfg.agent.mode}",
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "final_test_acc": float(np.mean(final_acc)),
        "final_client_test_acc": final_acc,
        "final_hyper_loss": records[-1].hyper_loss,
        "best_round": best[1],
        "best_hyper_loss": best[0],
        "best_test_acc": float(np.mean(best_acc)),
        "client_train_sizes": [c.n_train for c in clients],
        "config": cfg.to_dict(),
    }
    if out_dir:
        save_checkpoint(out_dir / "checkpoints" / "final.json", model, server.theta, round=cfg.rounds)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if plots:
            _render_run_plots(records, out_dir)
    return RunResult(records, summary, server.theta, agent)


def _write_timings(path: Path, timings):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write("q,t_local,t_server,t_eval,t_rl\n")
        for row in timings:
            fh.write(",".join([str(row[0])] + [f"{t:.6f}" for t in row[1:]]) + "\n")


def _render_run_plots(records, out_dir: Path):
    from . import plotting
    plotting.plot_aggregation_weights(records, out_dir / "aggregation_weights.svg")
    if records and records[0].has_policy:
        plotting.plot_hyperparam_evolution(records, out_dir / "hyperparams.svg")


def _out(cfg: ExperimentConfig, out_dir) -> Path | None:
    if out_dir is False:
        return None
    p = Path(out_dir if out_dir is not None else cfg.output)
    p.mkdir(parents=True, exist_ok=True)
    return p


def run_auto_fedrl(cfg: ExperimentConfig, out_dir=None, plots: bool = False) -> RunResult:
    """Full hyperparameter-optimizing run. ``out_dir=False`` skips all file output."""
    cfg.validate()
    if cfg.task == "bandit":
        return run_bandit(cfg, out_dir, plots)
    return _run_loop(cfg, "auto", _out(cfg, out_dir), plots)


def run_baseline(cfg: ExperimentConfig, kind: str | None = None, out_dir=None, plots: bool = False) -> RunResult:
    """Fixed-hyperparameter FedAvg/FedProx with data-size weights and unit server step."""
    cfg.validate()
    kind = kind or (cfg.baseline if cfg.baseline != "none" else "fedavg")
    if kind not in ("fedavg", "fedprox"):
        raise ValueError(f"unknown baseline {kind!r}")
    return _run_loop(cfg, kind, _out(cfg, out_dir), plots)


def run(cfg: ExperimentConfig, out_dir=None, plots: bool = False) -> RunResult:
    if cfg.task == "fl" and cfg.baseline != "none":
        return run_baseline(cfg, cfg.baseline, out_dir, plots)
    return run_auto_fedrl(cfg, out_dir, plots)


def local_only(cfg: ExperimentConfig, client_id: int, rounds: int | None = None) -> dict:
    """Train on one client's data for the federated compute budget; test on every client."""
    cfg.validate()
    fed = build_federation(cfg)
    if not 0 <= client_id < len(fed.clients):
        raise ValueError(f"client id must be in [0, {len(fed.clients)}), got {client_id}")
    model, own = fed.model, fed.clients[client_id]
    theta = model.init(_rng(cfg.seed, _INIT))
    rounds = cfg.rounds if rounds is None else rounds
    h = resolve_hyperparams(cfg, None, fed.sizes)
    iters = rounds * _iterations(h, own.n_train, cfg.model.batch_size)
    if iters > 0:
        ltc = LocalTrainConfig(h["lr"], iters, cfg.model.batch_size)
        theta, _ = local_train(model, theta, own.train, ltc, _rng(cfg.seed, _LOCAL_ONLY, client_id), client=client_id)
    acc = [c.test_eval(model, theta)[1] for c in fed.clients]
    return {
        "client": client_id,
        "iterations": iters,
        "test_acc": acc,
        "global_test_avg": float(np.mean(acc)),
    }


def bandit_reward(h: np.ndarray, target: np.ndarray) -> float:
    return -float(np.sum((h - target) ** 2))


def run_bandit(cfg: ExperimentConfig, out_dir=None, plots: bool = False) -> RunResult:
    """Stationary synthetic-reward loop exercising the agent alone."""
    cfg.validate()
    out_dir = _out(cfg, out_dir)
    space = cfg.build_space()
    agent = Agent(space, cfg.agent, _rng(cfg.seed, _MLP))
    sampler = _rng(cfg.seed, _SAMPLER)
    noise_rng = _rng(cfg.seed, _CLIENT)
    target = np.asarray(cfg.bandit.target, dtype=float)
    records = []
    writer = RoundCsvWriter(out_dir / "rounds.csv") if out_dir else None
    try:
        for q in range(1, cfg.rounds + 1):
            mu, sigma = policy_snapshot(space, agent.params)
            sample = agent.next_hyperparams(sampler)
            h = np.array([sample.raw[n] for n in space.names], dtype=float)
            reward = bandit_reward(h, target)
            if cfg.bandit.noise:
                reward += cfg.bandit.noise * float(noise_rng.standard_normal())
            agent.record_round(q, sample, reward)
            agent.step()
            rec = RoundRecord(q, reward, math.nan, math.nan, math.nan, [], [], dict(sample.raw), mu, sigma)
            records.append(rec)
            if writer:
                writer.append(rec)
    finally:
        if writer:
            writer.close()
    mu_final = space.to_raw(agent.params.mu, rounded=False)
    summary = {
        "name": cfg.name,
        "method": f"bandit-{cfg.agent.mode}",
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "final_mu": [mu_final[n] for n in space.names],
        "final_mu_normalized": agent.params.mu.tolist(),
        "final_sigma": agent.params.sigma.tolist(),
        "target": target.tolist(),
        "config": cfg.to_dict(),
    }
    if out_dir:
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if plots:
            from . import plotting
            plotting.plot_hyperparam_evolution(records, out_dir / "hyperparams.svg")
    return RunResult(records, summary, np.asarray(agent.params.mu), agent)
