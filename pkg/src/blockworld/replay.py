"""Episode replay with hindsight goal relabeling and MC returns.

Episodes are stored compactly (cell-code grids plus box bitmasks) in
per-environment FIFO rings capped at ``capacity_per_env`` transitions.
Sampling is uniform over all stored transitions across environments.

Relabeling follows the 50/50 scheme: half the samples take the achieved
box configuration of a later step in the same episode as their goal,
half take the configuration of a random stored state.  Rewards, done
flags, and discounted returns are recomputed against the relabeled goal
under the absorbing-success convention: the episode is treated as ending
at the first success, so the return is ``discount**k`` with ``k`` the
number of steps from the next state to that success (0 if never reached).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .env import GoalObservation, GridState, encode_observation, step


class BufferNotReady(RuntimeError):
    """Raised when sampling before ``min_size`` transitions are stored."""


@dataclass
class Episode:
    """One rollout against a fixed goal.

    ``obs`` has shape (T+1, grid_size**2) of cell codes; ``box_masks``
    and ``carrying`` mirror the states; ``actions`` has length T.
    """

    grid_size: int
    obs: np.ndarray
    box_masks: np.ndarray  # uint64 floor-box bitmasks per state
    carrying: np.ndarray  # bool per state
    actions: np.ndarray
    goal: GoalObservation
    success_step: int | None

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_rollout(cls, states: list[GridState], actions: list[int],
                     goal: GoalObservation) -> "Episode":
        if len(states) != len(actions) + 1:
            raise ValueError(
                f"need len(states) == len(actions) + 1, got {len(states)} and {len(actions)}"
            )
        for t, action in enumerate(actions):
            if step(states[t], action) != states[t + 1]:
                raise ValueError(f"transition {t} does not match the dynamics")
        g = states[0].grid_size
        obs = np.stack([encode_observation(s).reshape(-1) for s in states])
        masks = np.array([s.boxes for s in states], dtype=np.uint64)
        carrying = np.array([s.carrying for s in states], dtype=bool)
        goal_mask = np.uint64(goal.boxes)
        ok = (goal_mask & ~masks) == 0
        ok &= ~carrying
        success_step = int(np.argmax(ok)) if ok.any() else None
        return cls(g, obs, masks, carrying,
                   np.asarray(actions, dtype=np.int64), goal, success_step)

    def state_at(self, t: int) -> GridState:
        from .env import decode_observation

        return decode_observation(self.obs[t].reshape(self.grid_size, self.grid_size))


@dataclass
class RelabeledBatch:
    grid_size: int
    obs: np.ndarray          # (B, g*g) uint8 cell codes
    actions: np.ndarray      # (B,) int64
    next_obs: np.ndarray     # (B, g*g) uint8
    goal_cells: np.ndarray   # (B, g*g) uint8 binary
    rewards: np.ndarray      # (B,) float32
    dones: np.ndarray        # (B,) float32
    mc_returns: np.ndarray | None = None  # (B,) float32
    next_config: np.ndarray | None = None  # (B, g*g) uint8 achieved config of s'
    # provenance diagnostics: which (episode, t) each sample came from and
    # whether its goal was a future-state relabel
    ep_index: np.ndarray | None = None
    t_index: np.ndarray | None = None
    future_relabel: np.ndarray | None = None


@dataclass
class FuturePairBatch:
    grid_size: int
    obs: np.ndarray        # (B, g*g) uint8
    actions: np.ndarray    # (B,) int64
    pos_goal_cells: np.ndarray  # (B, g*g) uint8, achieved future configs
    neg_goal_cells: np.ndarray  # (B, g*g) uint8, buffer-marginal configs


def cells_from_mask_array(masks: np.ndarray, grid_size: int) -> np.ndarray:
    """(B,) uint64 bitmasks -> (B, grid_size**2) binary uint8 grids."""
    bits = np.arange(grid_size * grid_size, dtype=np.uint64)
    return ((masks[:, None] >> bits[None, :]) & np.uint64(1)).astype(np.uint8)


class ReplayBuffer:
    def __init__(self, n_envs: int = 1, capacity_per_env: int = 10_000,
                 min_size: int = 1_000):
        if n_envs < 1 or capacity_per_env < 1:
            raise ValueError("n_envs and capacity_per_env must be positive")
        self.n_envs = n_envs
        self.capacity_per_env = capacity_per_env
        self.min_size = min_size
        self._rings: list[deque[Episode]] = [deque() for _ in range(n_envs)]
        self._counts = [0] * n_envs
        self._flat: list[Episode] | None = None
        self._cum_transitions: np.ndarray | None = None
        self._cum_states: np.ndarray | None = None

    # -- storage ------------------------------------------------------------

    @property
    def n_transitions(self) -> int:
        return sum(self._counts)

    @property
    def n_episodes(self) -> int:
        return sum(len(r) for r in self._rings)

    @property
    def ready(self) -> bool:
        return self.n_transitions >= self.min_size

    def append(self, episode: Episode, env_id: int = 0) -> None:
        if not 0 <= env_id < self.n_envs:
            raise ValueError(f"env_id {env_id} out of range")
        if len(episode) == 0:
            raise ValueError("cannot store an empty episode")
        ring = self._rings[env_id]
        ring.append(episode)
        self._counts[env_id] += len(episode)
        while self._counts[env_id] > self.capacity_per_env and len(ring) > 1:
            self._counts[env_id] -= len(ring.popleft())
        self._flat = None

    def episodes(self) -> list[Episode]:
        self._refresh_index()
        assert self._flat is not None
        return list(self._flat)

    def _refresh_index(self) -> None:
        if self._flat is not None:
            return
        flat = [ep for ring in self._rings for ep in ring]
        self._flat = flat
        lengths = np.array([len(ep) for ep in flat], dtype=np.int64)
        self._cum_transitions = np.cumsum(lengths)
        self._cum_states = np.cumsum(lengths + 1)

    def _require_ready(self) -> None:
        if not self.ready:
            raise BufferNotReady(
                f"buffer holds {self.n_transitions} transitions; "
                f"min replay size is {self.min_size}"
            )

    # -- index sampling -----------------------------------------------------

    def _sample_transition_indices(self, batch_size: int, rng: np.random.Generator):
        """Uniform over stored transitions -> (episode_idx, t) arrays."""
        total = int(self._cum_transitions[-1])
        flat_idx = rng.integers(total, size=batch_size)
        ep_idx = np.searchsorted(self._cum_transitions, flat_idx, side="right")
        starts = np.where(ep_idx > 0, self._cum_transitions[ep_idx - 1], 0)
        return ep_idx, (flat_idx - starts).astype(np.int64)

    def _random_state_masks(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Achieved configs of uniform stored states; never the empty config."""
        total = int(self._cum_states[-1])
        flat_idx = rng.integers(total, size=batch_size)
        ep_idx = np.searchsorted(self._cum_states, flat_idx, side="right")
        starts = np.where(ep_idx > 0, self._cum_states[ep_idx - 1], 0)
        out = np.empty(batch_size, dtype=np.uint64)
        for i in range(batch_size):
            ep = self._flat[ep_idx[i]]
            mask = ep.box_masks[flat_idx[i] - starts[i]]
            # The initial state always has every box on the floor, so it
            # backstops the rare all-carried snapshot.
            out[i] = mask if mask else ep.box_masks[0]
        return out

    def _future_steps(self, ts: np.ndarray, lengths: np.ndarray,
                      rng: np.random.Generator, sampling: str,
                      discount: float) -> np.ndarray:
        """Indices t2 > t of the relabeling states, one per sample."""
        span = lengths - ts  # number of strictly-later states
        if sampling == "uniform":
            return ts + 1 + (rng.random(len(ts)) * span).astype(np.int64)
        if sampling != "geometric":
            raise ValueError(f"unknown future sampling {sampling!r}")
        if discount <= 0.0:
            return ts + 1
        # P(d) proportional to discount**(d-1) on {1..span}, truncated and
        # renormalized; inverse-CDF draw.
        u = rng.random(len(ts))
        total = 1.0 - discount ** span
        d = np.ceil(np.log1p(-u * total) / np.log(discount)).astype(np.int64)
        return ts + np.clip(d, 1, span)

    def _future_masks(self, ep_idx: np.ndarray, ts: np.ndarray,
                      rng: np.random.Generator, sampling: str,
                      discount: float) -> np.ndarray:
        lengths = np.array([len(self._flat[i]) for i in ep_idx], dtype=np.int64)
        t2 = self._future_steps(ts, lengths, rng, sampling, discount)
        out = np.empty(len(ts), dtype=np.uint64)
        for i in range(len(ts)):
            ep = self._flat[ep_idx[i]]
            mask = ep.box_masks[t2[i]]
            if not mask:
                later = np.nonzero(ep.box_masks[ts[i] + 1:] != 0)[0]
                mask = ep.box_masks[ts[i] + 1 + int(rng.choice(later))] if len(later) \
                    else np.uint64(0)
            out[i] = mask
        return out

    # -- relabeled batches ----------------------------------------------------

    def _relabel(self, batch_size: int, rng: np.random.Generator, discount: float,
                 future_fraction: float, absorbing: bool, with_mc: bool,
                 future_sampling: str = "uniform") -> RelabeledBatch:
        self._require_ready()
        self._refresh_index()
        ep_idx, ts = self._sample_transition_indices(batch_size, rng)
        use_future = rng.random(batch_size) < future_fraction
        goal_masks = np.where(
            use_future,
            self._future_masks(ep_idx, ts, rng, future_sampling, discount),
            self._random_state_masks(batch_size, rng),
        )
        empty = goal_masks == 0
        if empty.any():
            goal_masks[empty] = self._random_state_masks(int(empty.sum()), rng)

        g = self._flat[0].grid_size
        n2 = g * g
        obs = np.empty((batch_size, n2), dtype=np.uint8)
        next_obs = np.empty((batch_size, n2), dtype=np.uint8)
        actions = np.empty(batch_size, dtype=np.int64)
        next_mask = np.empty(batch_size, dtype=np.uint64)
        next_carrying = np.empty(batch_size, dtype=bool)
        mc = np.zeros(batch_size, dtype=np.float32) if with_mc else None
        for i in range(batch_size):
            ep = self._flat[ep_idx[i]]
            t = int(ts[i])
            obs[i] = ep.obs[t]
            next_obs[i] = ep.obs[t + 1]
            actions[i] = ep.actions[t]
            next_mask[i] = ep.box_masks[t + 1]
            next_carrying[i] = ep.carrying[t + 1]
            if with_mc:
                ok = (goal_masks[i] & ~ep.box_masks[t + 1:]) == 0
                ok &= ~ep.carrying[t + 1:]
                if ok.any():
                    if absorbing:
                        mc[i] = discount ** int(np.argmax(ok))
                    else:
                        mc[i] = float(np.sum(
                            ok * discount ** np.arange(len(ok), dtype=np.float64)
                        ))
        success = (goal_masks & ~next_mask) == 0
        success &= ~next_carrying
        rewards = success.astype(np.float32)
        dones = rewards.copy() if absorbing else np.zeros(batch_size, dtype=np.float32)
        return RelabeledBatch(
            grid_size=g,
            obs=obs,
            actions=actions,
            next_obs=next_obs,
            goal_cells=cells_from_mask_array(goal_masks, g),
            rewards=rewards,
            dones=dones,
            mc_returns=mc,
            next_config=cells_from_mask_array(next_mask, g),
            ep_index=ep_idx,
            t_index=ts,
            future_relabel=use_future,
        )

    def sample_relabeled(self, batch_size: int, rng: np.random.Generator,
                         discount: float = 0.99, future_fraction: float = 0.5,
                         absorbing: bool = True,
                         future_sampling: str = "uniform") -> RelabeledBatch:
        """MC-style batch: includes discounted returns toward the relabeled goal."""
        return self._relabel(batch_size, rng, discount, future_fraction,
                             absorbing, with_mc=True, future_sampling=future_sampling)

    def sample_transitions(self, batch_size: int, rng: np.random.Generator,
                           discount: float = 0.99, future_fraction: float = 0.5,
                           absorbing: bool = True) -> RelabeledBatch:
        """TD-style batch: (s, a, s', relabeled g, reward, done)."""
        return self._relabel(batch_size, rng, discount, future_fraction,
                             absorbing, with_mc=False)

    # -- contrastive batches --------------------------------------------------

    def sample_future_pairs(self, batch_size: int, rng: np.random.Generator,
                            discount: float = 0.99,
                            sampling: str = "uniform") -> FuturePairBatch:
        """(s, a) with a future achieved goal and a buffer-marginal goal.

        ``sampling="geometric"`` draws the future offset from the
        discount-matched distribution Geometric(1 - discount), truncated
        at the episode end and renormalized.
        """
        self._require_ready()
        self._refresh_index()
        ep_idx, ts = self._sample_transition_indices(batch_size, rng)
        g = self._flat[0].grid_size
        n2 = g * g
        obs = np.empty((batch_size, n2), dtype=np.uint8)
        actions = np.empty(batch_size, dtype=np.int64)
        for i in range(batch_size):
            ep = self._flat[ep_idx[i]]
            t = int(ts[i])
            obs[i] = ep.obs[t]
            actions[i] = ep.actions[t]
        pos = self._future_masks(ep_idx, ts, rng, sampling, discount)
        empty = pos == 0
        if empty.any():
            pos[empty] = self._random_state_masks(int(empty.sum()), rng)
        neg = self._random_state_masks(batch_size, rng)
        return FuturePairBatch(
            grid_size=g,
            obs=obs,
            actions=actions,
            pos_goal_cells=cells_from_mask_array(pos, g),
            neg_goal_cells=cells_from_mask_array(neg, g),
        )

    def random_goal_cells(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Buffer-marginal goal grids: achieved configs of random stored states."""
        self._require_ready()
        self._refresh_index()
        masks = self._random_state_masks(batch_size, rng)
        return cells_from_mask_array(masks, self._flat[0].grid_size)
