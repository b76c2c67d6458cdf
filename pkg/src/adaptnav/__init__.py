"""Crowd-aware robot navigation with an adaptive recurrent environment
encoder, an attention value network, a predictive collision reward, ORCA
crowd control, and a value-based RL training pipeline."""

from .sim import (AgentState, ObstacleState, SimConfig, SimState,
                  EpisodeOutcome, reset, step, observe, min_separation)
from .orca import OrcaParams, HalfPlane, compute_velocity, solve_lp2, demo_action
from .reward import RewardParams, OccupancyField, build_field, collision_probability
from .value_net import ValueNetwork, default_hyper
from .policy import ValuePolicy, OrcaPolicy, build_action_space
from .training import TrainConfig, ReplayMemory, train
from .metrics import MetricsReport, run_eval, run_episode, sweep

__version__ = "0.1.0"

__all__ = [
    "AgentState", "ObstacleState", "SimConfig", "SimState", "EpisodeOutcome",
    "reset", "step", "observe", "min_separation",
    "OrcaParams", "HalfPlane", "compute_velocity", "solve_lp2", "demo_action",
    "RewardParams", "OccupancyField", "build_field", "collision_probability",
    "ValueNetwork", "default_hyper",
    "ValuePolicy", "OrcaPolicy", "build_action_space",
    "TrainConfig", "ReplayMemory", "train",
    "MetricsReport", "run_eval", "run_episode", "sweep",
    "__version__",
]
