from .network import N_ACTIONS, QNetwork, act_greedy, dump_checkpoint, load_checkpoint
from .replay import ReplayMemory
from .train import (
    EpisodeSource,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    evaluate,
    greedy_policy,
    random_policy,
    run_policy_episode,
    success_rate,
    td_target,
    td_targets,
    train,
)
