"""Training and evaluation orchestration.

One training round rolls out every parallel environment for a full
episode under the Boltzmann policy, appends the episodes to replay, and
then runs ``collected_steps * num_updates / num_env_steps`` learner
updates (fractional budget carried between rounds).  Evaluation fires
every ``eval_interval`` updates on both the train-mode and eval-mode
task distributions and never touches the replay buffer.

Everything is driven by seed-split ``numpy`` generator streams, so a run
is fully deterministic given its seed.  ``sequential=True`` additionally
reports wall time as 0.0 so two equal-seed runs produce byte-identical
CSV output.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .agents import AgentSpec, CriticAgent, boltzmann_probs, policy_entropy
from .env import GridState, is_success, step
from .nets import load_checkpoint, save_checkpoint
from .replay import Episode, ReplayBuffer
from .tasks import Mode, SettingSpec, Task, sample_task

CSV_HEADER = ("step,algorithm,setting,mode,seed,success_rate,successes,episodes,"
              "mean_entropy,temperature,loss,wall_time_s")


@dataclass
class RunConfig:
    num_env_steps: int = 2_000_000
    num_updates: int = 200_000
    num_parallel_envs: int = 64
    batch_size: int = 256
    learning_rate: float = 3e-4
    discount: float = 0.99
    episode_length: int = 100
    max_replay_size: int = 10_000
    min_replay_size: int = 1_000
    eval_episodes: int = 256
    eval_interval: int = 20_000
    her_future_fraction: float = 0.5
    absorbing_success: bool = True
    seed: int = 0
    sequential: bool = False

    def __post_init__(self) -> None:
        for name in ("num_env_steps", "num_parallel_envs", "batch_size",
                     "episode_length", "max_replay_size", "eval_episodes",
                     "eval_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_updates < 0:
            raise ValueError("num_updates must be >= 0")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        if not 0.0 <= self.her_future_fraction <= 1.0:
            raise ValueError("her_future_fraction must be in [0, 1]")

    @property
    def update_ratio(self) -> float:
        return self.num_updates / self.num_env_steps


@dataclass
class RunRecord:
    step: int
    algorithm: str
    setting: str
    mode: str
    seed: int
    success_rate: float
    successes: int
    episodes: int
    mean_entropy: float
    temperature: float
    loss: float
    wall_time_s: float

    def to_csv_row(self) -> str:
        return (f"{self.step},{self.algorithm},{self.setting},{self.mode},"
                f"{self.seed},{self.success_rate:.6f},{self.successes},"
                f"{self.episodes},{self.mean_entropy:.6f},"
                f"{self.temperature:.6f},{self.loss:.6f},{self.wall_time_s:.6f}")


@dataclass
class TrainResult:
    records: list[RunRecord]
    agent: CriticAgent
    env_steps: int
    checkpoint_path: Path | None = None
    csv_path: Path | None = None


def write_records_csv(path, records: Sequence[RunRecord]) -> None:
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for record in records:
            f.write(record.to_csv_row() + "\n")


# --- rollouts -----------------------------------------------------------------


@dataclass
class RolloutStats:
    trajectories: list[tuple[list[GridState], list[int], Task]]
    success_steps: list[int | None]
    total_steps: int
    entropy_sum: float
    entropy_count: int

    @property
    def successes(self) -> int:
        return sum(s is not None for s in self.success_steps)

    @property
    def mean_entropy(self) -> float:
        return self.entropy_sum / max(self.entropy_count, 1)


def rollout_batch(agent: CriticAgent, tasks: Sequence[Task],
                  action_rngs: Sequence[np.random.Generator],
                  episode_length: int) -> RolloutStats:
    """Lockstep Boltzmann rollouts, one episode per task.

    Episodes terminate early at the first success (absorbing-success
    convention).  ``action_rngs[i]`` drives env i's action draws.
    """
    from .env import encode_observation

    n = len(tasks)
    states = [t.initial for t in tasks]
    goal_masks = [t.goal.boxes for t in tasks]
    goal_cells = np.stack([t.goal.cells.reshape(-1) for t in tasks])
    goal_emb = agent.goal_embeddings(goal_cells) if agent.twin else None

    trajectories = [([s], []) for s in states]
    success_steps: list[int | None] = [
        0 if not s.carrying and g & ~s.boxes == 0 else None
        for s, g in zip(states, goal_masks)
    ]
    active = [i for i in range(n) if success_steps[i] is None]
    entropy_sum = 0.0
    entropy_count = 0
    total_steps = 0

    for t in range(episode_length):
        if not active:
            break
        obs = np.stack([encode_observation(states[i]).reshape(-1) for i in active])
        q = agent.q_values(
            obs, goal_cells[active],
            goal_embeddings=goal_emb[active] if goal_emb is not None else None,
        )
        probs = boltzmann_probs(q, agent.tau)
        entropy_sum += float(policy_entropy(probs).sum())
        entropy_count += len(active)
        cdf = np.cumsum(probs, axis=1)
        still_active = []
        for row, i in enumerate(active):
            a = int(np.searchsorted(cdf[row], action_rngs[i].random()))
            a = min(a, probs.shape[1] - 1)
            next_state = step(states[i], a)
            states[i] = next_state
            trajectories[i][0].append(next_state)
            trajectories[i][1].append(a)
            total_steps += 1
            done = (not next_state.carrying
                    and goal_masks[i] & ~next_state.boxes == 0)
            if done:
                success_steps[i] = t + 1
            else:
                still_active.append(i)
        active = still_active

    return RolloutStats(
        trajectories=[(s, a, tasks[i]) for i, (s, a) in enumerate(trajectories)],
        success_steps=success_steps,
        total_steps=total_steps,
        entropy_sum=entropy_sum,
        entropy_count=entropy_count,
    )


def run_scripted_episodes(policy: Callable[[GridState, Task], int],
                          tasks: Sequence[Task], episode_length: int) -> int:
    """Count successes for a deterministic scripted policy (test helper)."""
    successes = 0
    for task in tasks:
        state = task.initial
        for t in range(episode_length + 1):
            if is_success(state, task.goal):
                successes += 1
                break
            if t == episode_length:
                break
            state = step(state, policy(state, task))
    return successes


# --- evaluation ----------------------------------------------------------------


def evaluate_agent(agent: CriticAgent, setting_spec: SettingSpec, mode: Mode,
                   episodes: int, rng: np.random.Generator,
                   episode_length: int = 100,
                   batch_envs: int = 64) -> tuple[int, float]:
    """Run fresh Boltzmann episodes; returns (successes, mean_entropy).

    Never writes to any replay buffer.  An episode counts as a success
    if the goal configuration is reached at any step up to
    ``episode_length``; the episode then terminates.
    """
    spec = setting_spec.with_mode(mode)
    successes = 0
    entropy_sum = 0.0
    entropy_count = 0
    remaining = episodes
    while remaining > 0:
        n = min(batch_envs, remaining)
        tasks = [sample_task(spec, rng) for _ in range(n)]
        stats = rollout_batch(agent, tasks, [rng] * n, episode_length)
        successes += stats.successes
        entropy_sum += stats.entropy_sum
        entropy_count += stats.entropy_count
        remaining -= n
    return successes, entropy_sum / max(entropy_count, 1)


def evaluate_checkpoint(checkpoint_path, setting_spec: SettingSpec, mode: Mode,
                        episodes: int, seed: int = 0,
                        episode_length: int = 100) -> RunRecord:
    tensors, meta = load_checkpoint(checkpoint_path)
    agent = CriticAgent.from_checkpoint(tensors, meta)
    if agent.grid_size != setting_spec.grid_size:
        raise ValueError(
            f"checkpoint was trained on grid {agent.grid_size}, "
            f"requested grid {setting_spec.grid_size}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    t0 = time.perf_counter()
    successes, mean_entropy = evaluate_agent(agent, setting_spec, mode, episodes,
                                             rng, episode_length)
    return RunRecord(
        step=agent.updates_done,
        algorithm=agent.spec.algorithm,
        setting=setting_spec.kind.value,
        mode=mode.value,
        seed=seed,
        success_rate=successes / episodes,
        successes=successes,
        episodes=episodes,
        mean_entropy=mean_entropy,
        temperature=agent.tau,
        loss=float("nan"),
        wall_time_s=time.perf_counter() - t0,
    )


# --- training ------------------------------------------------------------------


def train(config: RunConfig, agent_spec: AgentSpec, setting_spec: SettingSpec,
          out_dir=None, on_record: Callable[[RunRecord], None] | None = None,
          checkpoint_name: str = "final.ckpt") -> TrainResult:
    """Full training run; returns all records plus the trained agent."""
    seed_seq = np.random.SeedSequence(config.seed)
    net_seq, env_seq, eval_seq, learn_seq = seed_seq.spawn(4)
    agent = CriticAgent(agent_spec, setting_spec.grid_size,
                        np.random.default_rng(net_seq))
    env_rngs = [np.random.default_rng(s)
                for s in env_seq.spawn(config.num_parallel_envs)]
    eval_rng = np.random.default_rng(eval_seq)
    learn_rng = np.random.default_rng(learn_seq)

    buffer = ReplayBuffer(config.num_parallel_envs, config.max_replay_size,
                          config.min_replay_size)
    train_spec = setting_spec.with_mode(Mode.TRAIN)

    records: list[RunRecord] = []
    t0 = time.perf_counter()
    last_loss = float("nan")
    env_steps = 0

    def emit(step_count: int) -> None:
        for mode in (Mode.TRAIN, Mode.EVAL):
            successes, mean_entropy = evaluate_agent(
                agent, setting_spec, mode, config.eval_episodes, eval_rng,
                config.episode_length,
            )
            record = RunRecord(
                step=step_count,
                algorithm=agent_spec.algorithm,
                setting=setting_spec.kind.value,
                mode=mode.value,
                seed=config.seed,
                success_rate=successes / config.eval_episodes,
                successes=successes,
                episodes=config.eval_episodes,
                mean_entropy=mean_entropy,
                temperature=agent.tau,
                loss=last_loss,
                wall_time_s=0.0 if config.sequential else time.perf_counter() - t0,
            )
            records.append(record)
            if on_record is not None:
                on_record(record)

    emit(0)
    updates_done = 0
    owed = 0.0
    last_eval_at = 0
    while updates_done < config.num_updates:
        tasks = [sample_task(train_spec, env_rngs[i])
                 for i in range(config.num_parallel_envs)]
        stats = rollout_batch(agent, tasks, env_rngs, config.episode_length)
        for env_id, (states, actions, task) in enumerate(stats.trajectories):
            if actions:
                buffer.append(Episode.from_rollout(states, actions, task.goal), env_id)
        env_steps += stats.total_steps
        if stats.entropy_count:
            agent.entropy_estimate = stats.mean_entropy

        owed += stats.total_steps * config.update_ratio
        budget = min(int(owed), config.num_updates - updates_done)
        if budget > 0 and buffer.ready:
            for _ in range(budget):
                last_loss = agent.update(
                    buffer, learn_rng, config.batch_size, config.discount,
                    config.learning_rate, config.her_future_fraction,
                    config.absorbing_success,
                )
            owed -= budget
            updates_done += budget
        if updates_done - last_eval_at >= config.eval_interval:
            emit(updates_done)
            last_eval_at = updates_done - updates_done % config.eval_interval

    if updates_done > 0 and (not records or records[-1].step != updates_done):
        emit(updates_done)

    checkpoint_path = None
    csv_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tensors, meta = agent.checkpoint_tensors()
        meta["run"] = {
            "setting": setting_spec.kind.value,
            "grid_size": setting_spec.grid_size,
            "n_boxes": setting_spec.n_boxes,
            "m_preplaced": setting_spec.m_preplaced,
            "seed": config.seed,
        }
        checkpoint_path = out / checkpoint_name
        save_checkpoint(checkpoint_path, tensors, meta)
        csv_path = out / "metrics.csv"
        write_records_csv(csv_path, records)

    return TrainResult(records, agent, env_steps, checkpoint_path, csv_path)


# --- config files ---------------------------------------------------------------

_CONFIG_KEYS = {
    "num_env_steps": int,
    "num_updates": int,
    "num_parallel_envs": int,
    "batch_size": int,
    "learning_rate": float,
    "discount": float,
    "episode_length": int,
    "max_replay_size": int,
    "min_replay_size": int,
    "eval_episodes": int,
    "eval_interval": int,
    "her_future_fraction": float,
    "absorbing_success": bool,
    "seed": int,
    "sequential": bool,
    # agent-side keys
    "target_entropy": float,
    "temperature_lr": float,
    "representation_dimension": int,
    "energy_function": str,
    "contrastive_loss_function": str,
    "arch": str,
    "on_policy_target": bool,
    "target_network_period": int,
    "quasimetric_groups": int,
}


def _coerce(key: str, raw: str):
    kind = _CONFIG_KEYS[key]
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean for {key}: {raw!r}")
    if kind is int:
        return int(float(raw))
    if kind is float:
        return float(raw)
    return raw.strip()


def parse_config_file(path) -> dict:
    """Flat key/value config: one ``key = value`` per line, '#' comments."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = text.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def split_config(values: dict) -> tuple[dict, dict]:
    """Partition parsed config keys into RunConfig and AgentSpec kwargs."""
    agent_keys = {
        "target_entropy": "target_entropy",
        "temperature_lr": "temperature_lr",
        "representation_dimension": "repr_dim",
        "energy_function": "energy",
        "arch": "arch",
        "on_policy_target": "on_policy_target",
        "target_network_period": "target_network_period",
        "quasimetric_groups": "quasimetric_groups",
    }
    run_kwargs = {}
    agent_kwargs = {}
    for key, value in values.items():
        if key == "contrastive_loss_function":
            if value != "sigmoid_binary_cross_entropy":
                raise ValueError(
                    f"unsupported contrastive loss {value!r}; only "
                    "sigmoid_binary_cross_entropy is implemented"
                )
            continue
        if key in agent_keys:
            agent_kwargs[agent_keys[key]] = value
        else:
            run_kwargs[key] = value
    return run_kwargs, agent_kwargs
