"""Online policy-gradient agent over the hyperparameter distribution.

The agent keeps the last ``Z + 1`` (reward, score) pairs and moves the policy
along ``sum_t (r_t - mean(r)) * score_t``. Scores are the ones stored when
each sample was drawn, never recomputed at the current policy.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DivergenceError, RewardError
from .space import (
    DEFAULT_MAX_CARDINALITY,
    DistributionParams,
    HyperparamSample,
    HyperparamSpace,
    initial_params,
    sample_continuous,
    sample_discrete,
)

MODES = ("discrete", "continuous", "mlp")
SIGNS = ("ascent", "as-printed")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AgentConfig:
    mode: str = "continuous"
    gamma_h: float = 1e-2
    window: int = 10
    sigma_floor: float = 1e-3
    sign: str = "ascent"
    hidden: int = 32
    sigma0: float = 0.5
    max_cardinality: int = DEFAULT_MAX_CARDINALITY

    def validate(self, prefix="agent"):
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}, got {self.mode!r}", f"{prefix}.mode")
        if not (isinstance(self.gamma_h, (int, float)) and self.gamma_h >= 0 and math.isfinite(self.gamma_h)):
            raise ConfigError(f"must be >= 0, got {self.gamma_h}", f"{prefix}.gamma_h")
        if not isinstance(self.window, int) or self.window < 0:
            raise ConfigError(f"must be an integer >= 0, got {self.window}", f"{prefix}.window")
        if not 0 < self.sigma_floor < self.sigma0:
            raise ConfigError("need 0 < sigma_floor < sigma0", f"{prefix}.sigma_floor")
        if self.sign not in SIGNS:
            raise ConfigError(f"must be one of {SIGNS}", f"{prefix}.sign")
        if not isinstance(self.hidden, int) or self.hidden < 1:
            raise ConfigError("must be a positive integer", f"{prefix}.hidden")
        if not isinstance(self.max_cardinality, int) or self.max_cardinality < 2:
            raise ConfigError("must be an integer >= 2", f"{prefix}.max_cardinality")
        return self


def compute_reward(prev_loss: float, new_loss: float) -> float:
    """Relative reduction of the hyperparameter loss."""
    if not (math.isfinite(prev_loss) and math.isfinite(new_loss)):
        raise RewardError(f"non-finite hyperparameter loss ({prev_loss}, {new_loss})")
    if prev_loss <= 0:
        raise RewardError(f"previous hyperparameter loss must be > 0, got {prev_loss}")
    return (prev_loss - new_loss) / prev_loss


class WindowEntry(NamedTuple):
    round: int
    reward: float
    score_mu: np.ndarray
    score_log_sigma: np.ndarray


class RewardWindow:
    """Ring buffer holding the ``Z + 1`` most recent rewards and their scores."""

    def __init__(self, z: int):
        if z < 0:
            raise ValueError("window size Z must be >= 0")
        self.z = z
        self._entries: deque[WindowEntry] = deque(maxlen=z + 1)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def capacity(self) -> int:
        return self.z + 1

    def push(self, q: int, reward: float, score_mu, score_log_sigma):
        self._entries.append(WindowEntry(
            q, float(reward), np.array(score_mu, dtype=float), np.array(score_log_sigma, dtype=float),
        ))

    @property
    def rewards(self) -> list[float]:
        return [e.reward for e in self._entries]

    def baseline(self) -> float:
        if not self._entries:
            raise ValueError("empty reward window")
        return sum(self.rewards) / len(self._entries)

    def gradient(self) -> tuple[np.ndarray, np.ndarray]:
        """Baseline-subtracted score sum, split into (mu, log_sigma) parts."""
        b = self.baseline()
        g_mu = np.zeros_like(self._entries[0].score_mu)
        g_ls = np.zeros_like(g_mu)
        for e in self._entries:
            adv = e.reward - b
            g_mu += adv * e.score_mu
            g_ls += adv * e.score_log_sigma
        return g_mu, g_ls


class MlpPolicy:
    """Residual MLP mapping the previous policy vector to the next one.

    Layout of the flat weight vector: ``W1 (H, 2D)``, ``b1 (H)``,
    ``W2 (2D, H)``, ``b2 (2D)``. The output layer starts at zero so the
    first forward pass is the identity.
    """

    def __init__(self, dim: int, hidden: int, sigma_floor: float, rng: np.random.Generator):
        self.dim = dim
        self.hidden = hidden
        self.log_floor = math.log(sigma_floor)
        n_in = 2 * dim
        bound = 1.0 / math.sqrt(n_in)
        w = np.zeros(self.n_weights)
        w[: hidden * n_in] = rng.uniform(-bound, bound, hidden * n_in)
        self.weights = w

    @property
    def n_weights(self) -> int:
        n = 2 * self.dim
        return (n + 1) * self.hidden + (self.hidden + 1) * n

    def unpack(self, w):
        n, h = 2 * self.dim, self.hidden
        i = 0
        W1 = w[i : i + h * n].reshape(h, n); i += h * n
        b1 = w[i : i + h]; i += h
        W2 = w[i : i + n * h].reshape(n, h); i += n * h
        b2 = w[i : i + n]
        return W1, b1, W2, b2

    def forward(self, psi: np.ndarray, w: np.ndarray | None = None):
        """Return ``(psi_next, cache)``; log-sigma outputs are clamped at the floor."""
        W1, b1, W2, b2 = self.unpack(self.weights if w is None else w)
        hid = np.tanh(W1 @ psi + b1)
        out = psi + W2 @ hid + b2
        clamped = np.zeros(out.shape, dtype=bool)
        clamped[self.dim :] = out[self.dim :] < self.log_floor
        out[clamped] = self.log_floor
        return out, (psi, hid, clamped, W2)

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of ``grad_out . forward(psi, w)`` w.r.t. the flat weights."""
        psi, hid, clamped, W2 = cache
        g = np.where(clamped, 0.0, grad_out)
        d_hid = (W2.T @ g) * (1.0 - hid**2)
        return np.concatenate([np.outer(d_hid, psi).ravel(), d_hid, np.outer(g, hid).ravel(), g])


def mlp_objective(policy: MlpPolicy, w, psi_prev, g_psi) -> float:
    """Surrogate ``J(w) = g . psi_next(w)`` whose gradient is the policy-gradient step."""
    out, _ = policy.forward(psi_prev, w)
    return float(np.dot(g_psi, out))


def mlp_objective_grad(policy: MlpPolicy, w, psi_prev, g_psi) -> np.ndarray:
    _, cache = policy.forward(psi_prev, w)
    return policy.backward(cache, g_psi)


class Agent:
    """Mutable agent state: policy, reward window, and (for ``mlp``) network weights."""

    def __init__(self, space: HyperparamSpace, config: AgentConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.space = space
        self.config = (config or AgentConfig()).validate()
        self.params = initial_params(space, self.config.sigma0)
        self.window = RewardWindow(self.config.window)
        self.prev_hyper_loss: float | None = None
        self.steps = 0
        self.mlp: MlpPolicy | None = None
        if self.config.mode == "mlp":
            rng = rng if rng is not None else np.random.default_rng(0)
            self.mlp = MlpPolicy(space.size, self.config.hidden, self.config.sigma_floor, rng)
            self._adam_m = np.zeros(self.mlp.n_weights)
            self._adam_v = np.zeros(self.mlp.n_weights)

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def gamma_h(self) -> float:
        return self.config.gamma_h

    def record_round(self, q: int, sample: HyperparamSample, reward: float):
        if not math.isfinite(reward):
            raise RewardError(f"non-finite reward at round {q}")
        self.window.push(q, reward, sample.score_mu, sample.score_log_sigma)
        return self

    def step(self) -> DistributionParams:
        if self.mode == "mlp":
            policy_step_mlp(self)
        else:
            policy_step_direct(self)
        self.steps += 1
        return self.params

    def next_hyperparams(self, rng: np.random.Generator) -> HyperparamSample:
        return next_hyperparams(self, self.space, rng)


def _direction(agent: Agent) -> float:
    return 1.0 if agent.config.sign == "ascent" else -1.0


def _window_gradient(agent: Agent) -> tuple[np.ndarray, np.ndarray]:
    g_mu, g_ls = agent.window.gradient()
    if not (np.all(np.isfinite(g_mu)) and np.all(np.isfinite(g_ls))):
        raise DivergenceError(
            f"non-finite policy gradient: g_mu={g_mu}, g_log_sigma={g_ls}, "
            f"rewards={agent.window.rewards}"
        )
    return g_mu, g_ls


def policy_step_direct(agent: Agent) -> DistributionParams:
    """Windowed score-function step applied directly to (mu, log_sigma)."""
    if agent.mode not in ("discrete", "continuous"):
        raise ValueError(f"direct step needs discrete/continuous mode, got {agent.mode}")
    g_mu, g_ls = _window_gradient(agent)
    lr = _direction(agent) * agent.gamma_h
    p = agent.params
    agent.params = DistributionParams(p.mu + lr * g_mu, p.log_sigma + lr * g_ls).clamped(
        agent.config.sigma_floor
    )
    return agent.params


def policy_step_mlp(agent: Agent) -> DistributionParams:
    """Backpropagate the windowed gradient through the residual MLP and take an Adam step."""
    if agent.mode != "mlp" or agent.mlp is None:
        raise ValueError("mlp step needs mode='mlp'")
    g_mu, g_ls = _window_gradient(agent)
    psi_prev = agent.params.as_vector()
    grad_w = mlp_objective_grad(agent.mlp, agent.mlp.weights, psi_prev, np.concatenate([g_mu, g_ls]))
    t = agent.steps + 1
    agent._adam_m = ADAM_BETA1 * agent._adam_m + (1 - ADAM_BETA1) * grad_w
    agent._adam_v = ADAM_BETA2 * agent._adam_v + (1 - ADAM_BETA2) * grad_w**2
    m_hat = agent._adam_m / (1 - ADAM_BETA1**t)
    v_hat = agent._adam_v / (1 - ADAM_BETA2**t)
    agent.mlp.weights = agent.mlp.weights + _direction(agent) * agent.gamma_h * m_hat / (
        np.sqrt(v_hat) + ADAM_EPS
    )
    out, _ = agent.mlp.forward(psi_prev)
    agent.params = DistributionParams.from_vector(out).clamped(agent.config.sigma_floor)
    return agent.params


def next_hyperparams(agent: Agent, space: HyperparamSpace, rng: np.random.Generator) -> HyperparamSample:
    if agent.mode == "discrete":
        return sample_discrete(space, agent.params, rng, agent.config.max_cardinality)
    return sample_continuous(space, agent.params, rng)
