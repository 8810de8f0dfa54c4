"""Block-moving gridworld benchmark for goal-conditioned critics."""

from .agents import (
    ALGORITHMS,
    TARGET_ENTROPY,
    AgentSpec,
    CriticAgent,
    boltzmann_probs,
    boltzmann_sample,
    policy_entropy,
    update_temperature,
)
from .env import (
    Action,
    GoalObservation,
    GridState,
    N_ACTIONS,
    decode_observation,
    encode_goal,
    encode_observation,
    is_success,
    render_ascii,
    reward,
    step,
)
from .estimator import GoalCritic
from .harness import (
    RunConfig,
    RunRecord,
    TrainResult,
    evaluate_agent,
    evaluate_checkpoint,
    train,
)
from .oracle import (
    SearchResult,
    count_configurations,
    enumerate_tasks,
    is_solvable,
    optimal_steps,
    state_distance,
)
from .replay import Episode, ReplayBuffer
from .stats import (
    AggregateResult,
    generalization_gap,
    iqm,
    stratified_bootstrap_ci,
)
from .tasks import Mode, SettingKind, SettingSpec, Task, sample_task

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "Action",
    "AgentSpec",
    "AggregateResult",
    "CriticAgent",
    "Episode",
    "GoalCritic",
    "GoalObservation",
    "GridState",
    "Mode",
    "N_ACTIONS",
    "ReplayBuffer",
    "RunConfig",
    "RunRecord",
    "SearchResult",
    "SettingKind",
    "SettingSpec",
    "TARGET_ENTROPY",
    "Task",
    "TrainResult",
    "boltzmann_probs",
    "boltzmann_sample",
    "count_configurations",
    "decode_observation",
    "encode_goal",
    "encode_observation",
    "enumerate_tasks",
    "evaluate_agent",
    "evaluate_checkpoint",
    "generalization_gap",
    "iqm",
    "is_solvable",
    "is_success",
    "optimal_steps",
    "policy_entropy",
    "render_ascii",
    "reward",
    "sample_task",
    "state_distance",
    "stats",
    "step",
    "stratified_bootstrap_ci",
    "train",
    "update_temperature",
]
