"""Federated learning simulator with online policy-gradient hyperparameter search."""

from .agent import Agent, AgentConfig, RewardWindow, compute_reward
from .config import ExperimentConfig, load_config
from .fl import evaluate, hyper_loss, local_train, server_update
from .space import (
    DistributionParams,
    HyperparamDim,
    HyperparamSpace,
    build_space,
    grid_cardinality,
    sample_continuous,
    sample_discrete,
)

__version__ = "0.1.0"
