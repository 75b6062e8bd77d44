"""Hyperparameter search space, normalization, and the two sampling policies.

Every searched hyperparameter lives on a shared normalized axis ``[-s, s]``
centred at zero. The policy is a diagonal Gaussian over that axis; discrete
search evaluates it on a finite grid and normalizes into a PMF, continuous
search draws from it directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CapacityError, ConfigError

CONTINUOUS = "continuous"
INTEGER = "integer"
SIMPLEX = "simplex"

_KIND_ALIASES = {
    "continuous": CONTINUOUS,
    "continuous-positive": CONTINUOUS,
    "integer": INTEGER,
    "integer-count": INTEGER,
    "simplex": SIMPLEX,
    "simplex-weight": SIMPLEX,
}

DEFAULT_MAX_CARDINALITY = 10**7
_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class HyperparamDim:
    name: str
    raw_min: float
    raw_max: float
    kind: str = CONTINUOUS
    grid_points: int | None = None
    log_scaled: bool = False
    group: str | None = None
    init: float | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, INTEGER, SIMPLEX):
            raise ConfigError(f"unknown kind {self.kind!r}", self.name)
        if not (math.isfinite(self.raw_min) and math.isfinite(self.raw_max)):
            raise ConfigError("range must be finite", self.name)
        if not self.raw_min < self.raw_max:
            raise ConfigError(
                f"raw_min ({self.raw_min}) must be < raw_max ({self.raw_max})", self.name
            )
        if self.log_scaled and self.raw_min <= 0:
            raise ConfigError("log_scaled dims need raw_min > 0", self.name)
        if self.kind == INTEGER and self.raw_min < 1:
            raise ConfigError("integer dims need raw_min >= 1", self.name)
        if self.grid_points is not None and self.grid_points < 2:
            raise ConfigError("grid_points must be >= 2", self.name)
        if self.init is not None and not self.raw_min <= self.init <= self.raw_max:
            raise ConfigError(f"init {self.init} outside [{self.raw_min}, {self.raw_max}]", self.name)

    def _warp(self, x):
        return np.log(x) if self.log_scaled else x

    def _unwarp(self, u):
        return np.exp(u) if self.log_scaled else u

    def normalize(self, raw, scale=1.0):
        lo, hi = self._warp(self.raw_min), self._warp(self.raw_max)
        return scale * (2.0 * (self._warp(raw) - lo) / (hi - lo) - 1.0)

    def denormalize(self, z, scale=1.0):
        """Continuous inverse of :meth:`normalize` (no rounding, no clipping)."""
        lo, hi = self._warp(self.raw_min), self._warp(self.raw_max)
        return self._unwarp(lo + (z / scale + 1.0) * 0.5 * (hi - lo))


@dataclass(frozen=True)
class HyperparamSpace:
    dims: tuple[HyperparamDim, ...]
    scale: float = 1.0

    def __post_init__(self):
        if not self.dims:
            raise ConfigError("space needs at least one dim", "space.dims")
        seen = set()
        for d in self.dims:
            if d.name in seen:
                raise ConfigError(f"duplicate dim name {d.name!r}", "space.dims")
            seen.add(d.name)
        if not self.scale > 0:
            raise ConfigError("scale must be > 0", "space.scale")

    @property
    def size(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def groups(self) -> dict[str, list[int]]:
        """Simplex groups as ``{group name: [dim indices]}``."""
        out: dict[str, list[int]] = {}
        for i, d in enumerate(self.dims):
            if d.kind == SIMPLEX:
                out.setdefault(d.group or "", []).append(i)
        return out

    def grid(self, i: int) -> np.ndarray:
        d = self.dims[i]
        if d.grid_points is None:
            raise ConfigError("grid_points required for discrete search", d.name)
        return np.linspace(-self.scale, self.scale, d.grid_points)

    def clip(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, -self.scale, self.scale)

    def to_normalized(self, raw: Mapping[str, float]) -> np.ndarray:
        """Map a raw assignment back to normalized coordinates.

        Simplex groups use the centred log of the weights (the inverse of the
        softmax up to a constant), clipped into range.
        """
        z = np.zeros(self.size)
        for i, d in enumerate(self.dims):
            if d.kind != SIMPLEX:
                z[i] = d.normalize(float(raw[d.name]), self.scale)
        for idx in self.groups().values():
            w = np.array([float(raw[self.dims[i].name]) for i in idx])
            logw = np.log(np.maximum(w, 1e-300))
            z[idx] = logw - logw.mean()
        return self.clip(z)

    def to_raw(self, normalized: Sequence[float], rounded: bool = True) -> dict[str, float]:
        """Inverse map from normalized coordinates to raw hyperparameter values.

        Coordinates are clipped into range first. Integer dims are rounded to
        the nearest integer with a floor of 1 unless ``rounded`` is false;
        each simplex group goes through a softmax.
        """
        z = self.clip(np.asarray(normalized, dtype=float))
        if z.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, got shape {z.shape}")
        raw: dict[str, float] = {}
        for i, d in enumerate(self.dims):
            if d.kind == SIMPLEX:
                continue
            v = float(np.clip(d.denormalize(z[i], self.scale), d.raw_min, d.raw_max))
            if d.kind == INTEGER and rounded:
                v = max(1, int(np.floor(v + 0.5)))
            raw[d.name] = v
        for idx in self.groups().values():
            w = softmax(z[idx])
            for i, wi in zip(idx, w):
                raw[self.dims[i].name] = float(wi)
        return raw


@dataclass
class DistributionParams:
    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.log_sigma = np.asarray(self.log_sigma, dtype=float)
        if self.mu.shape != self.log_sigma.shape or self.mu.ndim != 1:
            raise ValueError("mu and log_sigma must be 1-d vectors of equal length")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def clamped(self, sigma_floor: float) -> "DistributionParams":
        return DistributionParams(self.mu.copy(), np.maximum(self.log_sigma, math.log(sigma_floor)))

    def copy(self) -> "DistributionParams":
        return DistributionParams(self.mu.copy(), self.log_sigma.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.log_sigma])

    @classmethod
    def from_vector(cls, v) -> "DistributionParams":
        v = np.asarray(v, dtype=float)
        n = v.size // 2
        return cls(v[:n].copy(), v[n:].copy())


def initial_params(space: HyperparamSpace, sigma0: float = 0.5) -> DistributionParams:
    """Policy at round zero: range centres (or declared ``init`` values) and a shared sigma."""
    mu = np.zeros(space.size)
    for i, d in enumerate(space.dims):
        if d.init is not None and d.kind != SIMPLEX:
            mu[i] = d.normalize(d.init, space.scale)
    return DistributionParams(mu, np.full(space.size, math.log(sigma0)))


@dataclass
class HyperparamSample:
    normalized: np.ndarray
    raw: dict[str, float]
    score_mu: np.ndarray
    score_log_sigma: np.ndarray
    unclipped: np.ndarray | None = None
    grid_index: tuple[int, ...] | None = None
    extras: dict = field(default_factory=dict)


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def build_space(config, n_clients: int | None = None, scale: float = 1.0) -> HyperparamSpace:
    """Build a space from a list of dim descriptions.

    Each entry is a mapping with ``name``, ``min``, ``max`` and optionally
    ``kind``, ``log_scaled``, ``grid_points`` and ``init``. A ``simplex``
    entry with ``size`` expands into ``name[0] .. name[size-1]``; ``size``
    defaults to ``n_clients``.
    """
    if isinstance(config, Mapping):
        config = config.get("dims", [])
    if not config:
        raise ConfigError("space needs at least one dim", "space.dims")
    dims: list[HyperparamDim] = []
    for j, entry in enumerate(config):
        if isinstance(entry, HyperparamDim):
            dims.append(entry)
            continue
        key = f"space.dims[{j}]"
        entry = dict(entry)
        unknown = set(entry) - {"name", "min", "max", "kind", "log_scaled", "grid_points", "size", "init"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", key)
        if "name" not in entry:
            raise ConfigError("missing 'name'", key)
        kind = _KIND_ALIASES.get(entry.get("kind", CONTINUOUS))
        if kind is None:
            raise ConfigError(f"unknown kind {entry.get('kind')!r}", f"{key}.kind")
        if kind == SIMPLEX:
            size = entry.get("size", n_clients)
            if size is None or size < 2:
                raise ConfigError("simplex group needs size >= 2", f"{key}.size")
            if n_clients is not None and size != n_clients:
                raise ConfigError(f"simplex group size {size} != client count {n_clients}", f"{key}.size")
            for k in range(size):
                dims.append(HyperparamDim(
                    name=f"{entry['name']}[{k}]", raw_min=float(entry.get("min", 0.0)),
                    raw_max=float(entry.get("max", 1.0)), kind=SIMPLEX,
                    grid_points=entry.get("grid_points"), group=entry["name"],
                ))
            continue
        if "size" in entry:
            raise ConfigError("'size' only applies to simplex dims", f"{key}.size")
        for req in ("min", "max"):
            if req not in entry:
                raise ConfigError(f"missing '{req}'", key)
        try:
            dims.append(HyperparamDim(
                name=entry["name"], raw_min=float(entry["min"]), raw_max=float(entry["max"]),
                kind=kind, grid_points=entry.get("grid_points"),
                log_scaled=bool(entry.get("log_scaled", False)),
                init=None if entry.get("init") is None else float(entry["init"]),
            ))
        except ConfigError as exc:
            raise ConfigError(str(exc), key) from None
    return HyperparamSpace(tuple(dims), scale)


def grid_cardinality(space: HyperparamSpace) -> int:
    """Number of points in the full discrete grid."""
    n = 1
    for d in space.dims:
        if d.grid_points is None:
            raise ConfigError("grid_points required for discrete search", d.name)
        n *= d.grid_points
        if n > _INT64_MAX:
            raise CapacityError(f"grid cardinality exceeds {_INT64_MAX}")
    return n


# --- continuous search -------------------------------------------------------

def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent standard normals from uniform pairs."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]


def gaussian_log_prob(h, mu, log_sigma) -> float:
    h, mu, log_sigma = (np.asarray(a, dtype=float) for a in (h, mu, log_sigma))
    z = (h - mu) * np.exp(-log_sigma)
    return float(np.sum(-0.5 * z**2 - log_sigma - 0.5 * math.log(2 * math.pi)))


def gaussian_score(h, mu, log_sigma) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the diagonal Gaussian log-density w.r.t. ``mu`` and ``log_sigma``."""
    h, mu, log_sigma = (np.asarray(a, dtype=float) for a in (h, mu, log_sigma))
    inv_var = np.exp(-2.0 * log_sigma)
    diff = h - mu
    return diff * inv_var, diff**2 * inv_var - 1.0


def sample_continuous(space: HyperparamSpace, params: DistributionParams,
                      rng: np.random.Generator) -> HyperparamSample:
    if not (np.all(np.isfinite(params.mu)) and np.all(np.isfinite(params.log_sigma))):
        raise ValueError("distribution parameters must be finite")
    z = box_muller(rng, space.size)
    h = params.mu + params.sigma * z
    score_mu, score_ls = gaussian_score(h, params.mu, params.log_sigma)
    clipped = space.clip(h)
    return HyperparamSample(
        normalized=clipped, raw=space.to_raw(clipped),
        score_mu=score_mu, score_log_sigma=score_ls, unclipped=h,
    )


# --- discrete search ---------------------------------------------------------

def _check_capacity(space, max_cardinality):
    n = grid_cardinality(space)
    if n > max_cardinality:
        raise CapacityError(f"grid cardinality {n} exceeds cap {max_cardinality}")
    return n


def discrete_log_pmf(space: HyperparamSpace, params: DistributionParams,
                     max_cardinality: int = DEFAULT_MAX_CARDINALITY) -> np.ndarray:
    """Log PMF over the full grid, shaped ``(grid_points[0], ..., grid_points[D-1])``."""
    _check_capacity(space, max_cardinality)
    shape = tuple(d.grid_points for d in space.dims)
    logp = np.zeros(shape)
    for i in range(space.size):
        t = (space.grid(i) - params.mu[i]) * math.exp(-params.log_sigma[i])
        view = [1] * space.size
        view[i] = shape[i]
        logp += (-0.5 * t**2).reshape(view)
    m = logp.max()
    logp -= m + math.log(np.exp(logp - m).sum())
    return logp


def discrete_pmf(space, params, max_cardinality=DEFAULT_MAX_CARDINALITY) -> np.ndarray:
    p = np.exp(discrete_log_pmf(space, params, max_cardinality))
    return p / p.sum()


def _grid_moments(space, params, pmf):
    # E[(g-mu)/s^2] and E[(g-mu)^2/s^2] per dim under the joint PMF
    e_a, e_b = np.empty(space.size), np.empty(space.size)
    for i in range(space.size):
        axes = tuple(j for j in range(space.size) if j != i)
        marg = pmf.sum(axis=axes) if axes else pmf
        diff = space.grid(i) - params.mu[i]
        inv_var = math.exp(-2.0 * params.log_sigma[i])
        e_a[i] = np.dot(marg, diff) * inv_var
        e_b[i] = np.dot(marg, diff**2) * inv_var
    return e_a, e_b


def discrete_score(space, params, index, pmf=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``log PMF(grid[index])`` w.r.t. ``mu`` and ``log_sigma``."""
    if pmf is None:
        pmf = discrete_pmf(space, params)
    e_a, e_b = _grid_moments(space, params, pmf)
    g = np.array([space.grid(i)[index[i]] for i in range(space.size)])
    a, b = gaussian_score(g, params.mu, params.log_sigma)
    return a - e_a, (b + 1.0) - e_b


def sample_discrete(space: HyperparamSpace, params: DistributionParams,
                    rng: np.random.Generator,
                    max_cardinality: int = DEFAULT_MAX_CARDINALITY) -> HyperparamSample:
    pmf = discrete_pmf(space, params, max_cardinality)
    cdf = np.cumsum(pmf, axis=None)
    u = rng.random() * cdf[-1]
    flat = min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)
    index = tuple(int(i) for i in np.unravel_index(flat, pmf.shape))
    score_mu, score_ls = discrete_score(space, params, index, pmf)
    g = np.array([space.grid(i)[index[i]] for i in range(space.size)])
    return HyperparamSample(
        normalized=g, raw=space.to_raw(g), score_mu=score_mu,
        score_log_sigma=score_ls, unclipped=g.copy(), grid_index=index,
    )
