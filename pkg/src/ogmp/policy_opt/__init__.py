"""Guided policy optimisation: networks, PPO, vectorised rollouts, training and evaluation."""

from .env import EnvConfig, EpisodeRecord, GuidedEnv
from .networks import NetworkParams, mlp_param_count, policy_forward
from .ppo import Adam, UpdateAborted, gae, ppo_loss_and_grads, ppo_update
from .rollout import RolloutBuffer, collect_rollouts
from .train import (
    CheckpointError,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    train_multi_policy_baseline,
)

__all__ = [
    "Adam", "CheckpointError", "EnvConfig", "EpisodeRecord", "GuidedEnv", "NetworkParams", "RolloutBuffer",
    "TrainConfig", "UpdateAborted", "collect_rollouts", "evaluate", "gae", "load_checkpoint", "mlp_param_count",
    "policy_forward", "ppo_loss_and_grads", "ppo_update", "save_checkpoint", "train", "train_multi_policy_baseline",
]
