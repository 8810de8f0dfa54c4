"""Scikit-learn style wrapper around the training harness.

``GoalCritic`` exposes fit/predict/score plus ``get_params`` /
``set_params`` so runs compose with the usual tooling (grid search over
``algo`` or ``num_updates``, cloning, pipelines that treat the trained
critic as a policy).  ``fit`` trains on the configured task
distribution; ``predict`` maps (observation, goal) queries to greedy
actions and ``decision_function`` to the six raw action scores.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .agents import AgentSpec, boltzmann_probs
from .harness import RunConfig, evaluate_agent, train
from .tasks import Mode, SettingSpec, parse_mode, parse_setting
from .validation import (
    check_goal_grid,
    check_observation_grid,
    check_positive_int,
)


class GoalCritic(BaseEstimator):
    """Goal-conditioned critic trained by Boltzmann rollouts.

    Parameters mirror the run configuration; see the README for the
    algorithm and setting names.  After ``fit`` the trained agent is
    available as ``agent_`` and the evaluation records as ``records_``.
    """

    def __init__(self, algo="dqn_td", setting="no_stitching", grid_size=4,
                 num_boxes=1, num_preplaced=0, arch="mlp",
                 num_updates=200_000, num_env_steps=2_000_000,
                 num_parallel_envs=64, batch_size=256, learning_rate=3e-4,
                 discount=0.99, episode_length=100, eval_episodes=256,
                 eval_interval=20_000, max_replay_size=10_000,
                 min_replay_size=1_000, her_future_fraction=0.5,
                 absorbing_success=True, energy_function="dot_product",
                 representation_dimension=64, target_entropy=None,
                 temperature_lr=1e-3, on_policy_target=False,
                 target_network_period=0, quasimetric_groups=8,
                 seed=0, sequential=False):
        self.algo = algo
        self.setting = setting
        self.grid_size = grid_size
        self.num_boxes = num_boxes
        self.num_preplaced = num_preplaced
        self.arch = arch
        self.num_updates = num_updates
        self.num_env_steps = num_env_steps
        self.num_parallel_envs = num_parallel_envs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.discount = discount
        self.episode_length = episode_length
        self.eval_episodes = eval_episodes
        self.eval_interval = eval_interval
        self.max_replay_size = max_replay_size
        self.min_replay_size = min_replay_size
        self.her_future_fraction = her_future_fraction
        self.absorbing_success = absorbing_success
        self.energy_function = energy_function
        self.representation_dimension = representation_dimension
        self.target_entropy = target_entropy
        self.temperature_lr = temperature_lr
        self.on_policy_target = on_policy_target
        self.target_network_period = target_network_period
        self.quasimetric_groups = quasimetric_groups
        self.seed = seed
        self.sequential = sequential

    # -- configuration -------------------------------------------------------

    def _setting_spec(self) -> SettingSpec:
        return SettingSpec(
            kind=parse_setting(self.setting),
            grid_size=check_positive_int("grid_size", self.grid_size),
            n_boxes=check_positive_int("num_boxes", self.num_boxes),
            m_preplaced=int(self.num_preplaced),
        )

    def _agent_spec(self) -> AgentSpec:
        kwargs = dict(
            algorithm=self.algo,
            arch=self.arch,
            repr_dim=self.representation_dimension,
            energy=self.energy_function,
            temperature_lr=self.temperature_lr,
            on_policy_target=self.on_policy_target,
            target_network_period=self.target_network_period,
            quasimetric_groups=self.quasimetric_groups,
        )
        if self.target_entropy is not None:
            kwargs["target_entropy"] = self.target_entropy
        return AgentSpec(**kwargs)

    def _run_config(self) -> RunConfig:
        return RunConfig(
            num_env_steps=self.num_env_steps,
            num_updates=self.num_updates,
            num_parallel_envs=self.num_parallel_envs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            discount=self.discount,
            episode_length=self.episode_length,
            max_replay_size=self.max_replay_size,
            min_replay_size=self.min_replay_size,
            eval_episodes=self.eval_episodes,
            eval_interval=self.eval_interval,
            her_future_fraction=self.her_future_fraction,
            absorbing_success=self.absorbing_success,
            seed=self.seed,
            sequential=self.sequential,
        )

    # -- estimator API ----------------------------------------------------------

    def fit(self, X=None, y=None):
        """Train on the configured task distribution.  X and y are ignored."""
        result = train(self._run_config(), self._agent_spec(), self._setting_spec())
        self.agent_ = result.agent
        self.records_ = result.records
        self.env_steps_ = result.env_steps
        self.n_features_in_ = 2 * self.grid_size * self.grid_size
        return self

    def _check_fitted(self):
        if not hasattr(self, "agent_"):
            raise RuntimeError("this GoalCritic instance is not fitted yet")

    def _unpack(self, X):
        g = self.agent_.grid_size
        n2 = g * g
        if isinstance(X, (tuple, list)) and len(X) == 2:
            obs, goals = X
        else:
            arr = np.asarray(X)
            if arr.ndim == 4 and arr.shape[1] == 2:
                obs, goals = arr[:, 0], arr[:, 1]
            elif arr.ndim == 2 and arr.shape[1] == 2 * n2:
                obs, goals = arr[:, :n2], arr[:, n2:]
            else:
                raise ValueError(
                    "X must be (observations, goals), an (N, 2, g, g) stack, "
                    f"or an (N, {2 * n2}) matrix; got shape {np.asarray(X).shape}"
                )
        return check_observation_grid(obs, g), check_goal_grid(goals, g)

    def decision_function(self, X) -> np.ndarray:
        """Six action scores per (observation, goal) query."""
        self._check_fitted()
        obs, goals = self._unpack(X)
        return self.agent_.q_values(obs, goals)

    def predict(self, X) -> np.ndarray:
        """Greedy action indices."""
        return self.decision_function(X).argmax(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        """Boltzmann action probabilities at the tuned temperature."""
        self._check_fitted()
        return boltzmann_probs(self.decision_function(X), self.agent_.tau)

    def score(self, X=None, y=None, mode="eval", episodes=None, seed=0) -> float:
        """Success rate over fresh episodes of the configured setting."""
        self._check_fitted()
        episodes = episodes or self.eval_episodes
        successes, _ = evaluate_agent(
            self.agent_, self._setting_spec(), parse_mode(mode), episodes,
            np.random.default_rng(seed), self.episode_length,
        )
        return successes / episodes
