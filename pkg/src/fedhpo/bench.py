"""Time and memory cost of drawing one hyperparameter sample, discrete vs continuous."""

from __future__ import annotations

import csv
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .space import (
    DEFAULT_MAX_CARDINALITY,
    HyperparamDim,
    HyperparamSpace,
    grid_cardinality,
    initial_params,
    sample_continuous,
    sample_discrete,
)

DEFAULT_CARDINALITIES = (10**3, 10**4, 10**5, 10**6, 10**7)
DEFAULT_CLIENT_COUNTS = (2, 4, 6, 8)


@dataclass
class CostProbe:
    sweep: str
    mode: str
    cardinality: int
    n_dims: int
    clients: int
    peak_bytes: int
    seconds: float


def _prime_factors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def grid_space(cardinality: int, n_dims: int) -> HyperparamSpace:
    """A ``n_dims`` space whose grid has exactly ``cardinality`` points, balanced across dims."""
    factors = sorted(_prime_factors(cardinality), reverse=True)
    if len(factors) < n_dims:
        raise ValueError(f"{cardinality} has fewer than {n_dims} prime factors")
    points = [1] * n_dims
    for f in factors:
        points[int(np.argmin(points))] *= f
    return HyperparamSpace(tuple(
        HyperparamDim(f"x{i}", -1.0, 1.0, grid_points=p) for i, p in enumerate(points)
    ))


def client_space(n_clients: int, grid_points: int = 3) -> HyperparamSpace:
    """LR, local iterations, server LR and one aggregation weight per client."""
    dims = [
        HyperparamDim("lr", 1e-4, 1e-1, log_scaled=True, grid_points=grid_points),
        HyperparamDim("local_iters", 1, 50, kind="integer", grid_points=grid_points),
        HyperparamDim("server_lr", 0.5, 1.5, grid_points=grid_points),
    ]
    dims += [HyperparamDim(f"aw[{k}]", 0.0, 1.0, kind="simplex", group="aw", grid_points=grid_points)
             for k in range(n_clients)]
    return HyperparamSpace(tuple(dims))


def _sampler(mode):
    return sample_discrete if mode == "discrete" else sample_continuous


def time_per_sample(space, mode: str, repeats: int, seed: int = 0) -> float:
    """Median wall time of one sample (PMF construction included for discrete)."""
    params = initial_params(space)
    rng = np.random.default_rng(seed)
    fn = _sampler(mode)
    kw = {"max_cardinality": DEFAULT_MAX_CARDINALITY} if mode == "discrete" else {}
    fn(space, params, rng, **kw)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(space, params, rng, **kw)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def peak_memory(space, mode: str, seed: int = 0, repeats: int = 9) -> int:
    """Smallest peak traced allocation (bytes) over ``repeats`` single-sample calls.

    The minimum drops interpreter allocations that happen to land inside one call.
    """
    params = initial_params(space)
    rng = np.random.default_rng(seed)
    fn = _sampler(mode)
    kw = {"max_cardinality": DEFAULT_MAX_CARDINALITY} if mode == "discrete" else {}
    fn(space, params, rng, **kw)
    peaks = []
    tracemalloc.start()
    try:
        for _ in range(repeats):
            tracemalloc.reset_peak()
            base = tracemalloc.get_traced_memory()[0]
            fn(space, params, rng, **kw)
            peaks.append(max(0, tracemalloc.get_traced_memory()[1] - base))
    finally:
        tracemalloc.stop()
    return int(min(peaks))


def _repeats(mode: str, cardinality: int) -> int:
    if mode == "continuous":
        return 301
    return max(3, min(51, 10**6 // max(cardinality, 1)))


def _mem_repeats(mode: str, cardinality: int) -> int:
    return 3 if mode == "discrete" and cardinality >= 10**6 else 9


def benchmark_search_cost(cardinalities: Sequence[int] = DEFAULT_CARDINALITIES,
                          client_counts: Sequence[int] = DEFAULT_CLIENT_COUNTS,
                          n_dims: int = 6, modes=("discrete", "continuous"),
                          seed: int = 0) -> list[CostProbe]:
    probes = []
    for c in cardinalities:
        space = grid_space(c, n_dims)
        for mode in modes:
            probes.append(CostProbe("grid", mode, c, n_dims, 0, peak_memory(space, mode, seed, _mem_repeats(mode, c)),
                                    time_per_sample(space, mode, _repeats(mode, c), seed)))
    for k in client_counts:
        space = client_space(k)
        c = grid_cardinality(space)
        for mode in modes:
            probes.append(CostProbe("clients", mode, c, space.size, k, peak_memory(space, mode, seed, _mem_repeats(mode, c)),
                                    time_per_sample(space, mode, _repeats(mode, c), seed)))
    return probes


def write_cost_csv(probes: Sequence[CostProbe], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.name for f in fields(CostProbe)])
        for p in probes:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(p).values()])
    return path


def read_cost_csv(path) -> list[CostProbe]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [CostProbe(r["sweep"], r["mode"], int(r["cardinality"]), int(r["n_dims"]), int(r["clients"]),
                      int(r["peak_bytes"]), float(r["seconds"])) for r in rows]
