"""Critic-learning algorithms and the Boltzmann behavior policy.

Six action scores are produced for every (state, goal) query:

* ``dqn_td`` / ``dqn_mc`` — Q-heads trained on squared error against a
  bootstrapped target (max or expected-Boltzmann over the next state) or
  against the observed discounted return.
* ``clearn_td`` / ``clearn_mc`` — classifiers whose odds estimate the
  discounted future-state visitation ratio; scores are the logits.
* ``crl`` / ``cmd`` — twin encoders scored by an energy between the
  state-action embedding and the goal embedding (dot product, negative
  L2, or negative quasimetric distance for ``cmd``).

Behavior and evaluation both sample actions from softmax(scores / tau);
``tau`` is driven toward a target policy entropy of ln(|A|/2).

Networks consume one-hot featurizations: 6 channels per observation
cell, 2 per goal cell, and a 6-way one-hot for the action in the
state-action encoders.  Raw integer codes are never fed to a network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .env import N_ACTIONS, N_CELL_CODES, N_GOAL_CODES
from .nets import (
    AdamState,
    Network,
    adam_step,
    build_network,
    params_finite,
    quasimetric_pairwise,
    quasimetric_pairwise_vjp,
)
from .replay import ReplayBuffer

ALGORITHMS = ("dqn_td", "dqn_mc", "clearn_td", "clearn_mc", "crl", "cmd")

TARGET_ENTROPY = math.log(N_ACTIONS / 2)  # ln 3, about 1.0986
TAU_MIN = 1e-3
TAU_MAX = 10.0
PROB_CLIP = 1e-6
IMPORTANCE_WEIGHT_CLIP = 20.0


class TrainingDiverged(RuntimeError):
    """Loss or parameters became non-finite."""


# --- featurization -------------------------------------------------------------

_EYE_OBS = np.eye(N_CELL_CODES, dtype=np.float32)
_EYE_GOAL = np.eye(N_GOAL_CODES, dtype=np.float32)
_EYE_ACT = np.eye(N_ACTIONS, dtype=np.float32)


def featurize_sg(obs: np.ndarray, goal_cells: np.ndarray) -> np.ndarray:
    """(N, g*g) codes + (N, g*g) goal bits -> (N, g*g*8) one-hot features."""
    n = len(obs)
    return np.concatenate(
        [_EYE_OBS[obs].reshape(n, -1), _EYE_GOAL[goal_cells].reshape(n, -1)], axis=1
    )


def featurize_sa(obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    n = len(obs)
    return np.concatenate([_EYE_OBS[obs].reshape(n, -1), _EYE_ACT[actions]], axis=1)


def featurize_goal(goal_cells: np.ndarray) -> np.ndarray:
    return _EYE_GOAL[goal_cells].reshape(len(goal_cells), -1)


def sg_input_dim(grid_size: int) -> int:
    return grid_size * grid_size * (N_CELL_CODES + N_GOAL_CODES)


def sa_input_dim(grid_size: int) -> int:
    return grid_size * grid_size * N_CELL_CODES + N_ACTIONS


def goal_input_dim(grid_size: int) -> int:
    return grid_size * grid_size * N_GOAL_CODES


# --- Boltzmann policy ----------------------------------------------------------


def boltzmann_probs(q: np.ndarray, tau: float) -> np.ndarray:
    """softmax(q / tau) along the last axis, max-subtracted for stability."""
    q = np.asarray(q, dtype=np.float64)
    if not np.isfinite(q).all():
        raise ValueError("non-finite action scores")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = q / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def boltzmann_sample(q: np.ndarray, tau: float, rng: np.random.Generator) -> int:
    probs = boltzmann_probs(q, tau)
    return int(np.searchsorted(np.cumsum(probs), rng.random()))


def policy_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-12, 1.0)
    return -(p * np.log(p)).sum(axis=-1)


def update_temperature(entropy_mean: float, tau: float,
                       target: float = TARGET_ENTROPY, lr: float = 1e-3) -> float:
    """Multiplicative controller: entropy above target drives tau down.

    log tau <- log tau + lr * (target - entropy_mean), then clamp.
    """
    log_tau = math.log(tau) + lr * (target - entropy_mean)
    log_tau = min(max(log_tau, math.log(TAU_MIN)), math.log(TAU_MAX))
    return math.exp(log_tau)


# --- loss primitives ------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bce(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    return -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))


def dqn_td_loss(net: Network, params, x, actions, rewards, dones, x_next,
                discount: float, on_policy_tau: float | None = None,
                target_params=None):
    """Squared error against r + (1 - done) * discount * V(s').

    V is max over next actions by default; with ``on_policy_tau`` it is
    the expected value under the Boltzmann policy at that temperature.
    The target is a stop-gradient.
    """
    q, caches = net.forward_cached(params, x)
    q_next = net.forward(target_params if target_params is not None else params, x_next)
    if on_policy_tau is None:
        next_v = q_next.max(axis=1)
    else:
        probs = boltzmann_probs(q_next, on_policy_tau)
        next_v = (probs * q_next).sum(axis=1)
    target = rewards + (1.0 - dones) * discount * next_v
    idx = np.arange(len(actions))
    diff = q[idx, actions] - target
    loss = float(np.mean(diff ** 2))
    dq = np.zeros_like(q)
    dq[idx, actions] = 2.0 * diff / len(actions)
    grads, _ = net.backward(params, caches, dq)
    return loss, grads


def dqn_mc_loss(net: Network, params, x, actions, mc_returns):
    """Squared error against the observed discounted return."""
    q, caches = net.forward_cached(params, x)
    idx = np.arange(len(actions))
    diff = q[idx, actions] - mc_returns
    loss = float(np.mean(diff ** 2))
    dq = np.zeros_like(q)
    dq[idx, actions] = 2.0 * diff / len(actions)
    grads, _ = net.backward(params, caches, dq)
    return loss, grads


def clearn_mc_loss(net: Network, params, x, actions, labels):
    """Binary cross-entropy on C(s, a, g) with future/random goal labels."""
    logits, caches = net.forward_cached(params, x)
    idx = np.arange(len(actions))
    la = logits[idx, actions]
    p = _sigmoid(la)
    loss = float(np.mean(_bce(p, labels)))
    dlogits = np.zeros_like(logits)
    dlogits[idx, actions] = ((p - labels) / len(actions)).astype(logits.dtype)
    grads, _ = net.backward(params, caches, dlogits)
    return loss, grads


def clearn_td_loss(net: Network, params, x_next_config, x_goal, actions,
                   x_next_goal, next_actions, discount: float,
                   w_clip: float = IMPORTANCE_WEIGHT_CLIP):
    """Recursive classification update.

    loss = (1-g) * CE(C(s,a,config(s')), 1)
         + g * w * CE(C(s,a,goal), 1) + CE(C(s,a,goal), 0)

    with w = odds of C at (s', a', goal) under a stop-gradient, clipped
    to [0, w_clip]; goals are drawn from the buffer marginal and a' from
    the current Boltzmann policy.
    """
    b = len(actions)
    idx = np.arange(b)
    stacked = np.concatenate([x_next_config, x_goal], axis=0)
    logits, caches = net.forward_cached(params, stacked)
    l_cfg = logits[:b][idx, actions]
    l_goal = logits[b:][idx, actions]
    # stop-gradient importance weight from the next state-action
    l_next = net.forward(params, x_next_goal)[idx, next_actions]
    p_next = np.clip(_sigmoid(l_next), PROB_CLIP, 1.0 - PROB_CLIP)
    w = np.clip(p_next / (1.0 - p_next), 0.0, w_clip)

    p_cfg = _sigmoid(l_cfg)
    p_goal = _sigmoid(l_goal)
    ones = np.ones(b)
    zeros = np.zeros(b)
    loss = float(np.mean(
        (1.0 - discount) * _bce(p_cfg, ones)
        + discount * w * _bce(p_goal, ones)
        + _bce(p_goal, zeros)
    ))
    dlogits = np.zeros_like(logits)
    dlogits[:b][idx, actions] = ((1.0 - discount) * (p_cfg - 1.0) / b).astype(logits.dtype)
    dlogits[b:][idx, actions] = (
        (discount * w * (p_goal - 1.0) + p_goal) / b
    ).astype(logits.dtype)
    grads, _ = net.backward(params, caches, dlogits)
    return loss, grads


def contrastive_loss(sa_net: Network, g_net: Network, sa_params, g_params,
                     x_sa, x_g, energy: str = "dot_product",
                     num_groups: int | None = None):
    """Sigmoid binary cross-entropy over all pairs in the batch.

    Logits L[i, j] score state-action i against goal j; labels are the
    identity (goal j was achieved after state-action j).  Returns the
    loss and gradients for both encoders.
    """
    b = len(x_sa)
    phi, sa_caches = sa_net.forward_cached(sa_params, x_sa)
    psi, g_caches = g_net.forward_cached(g_params, x_g)
    if energy == "dot_product":
        logits = phi @ psi.T
    elif energy == "l2":
        d2 = ((phi[:, None, :] - psi[None, :, :]) ** 2).sum(axis=-1)
        dist = np.sqrt(d2 + 1e-12)
        logits = -dist
    elif energy == "quasimetric":
        dist, q_cache = quasimetric_pairwise(phi, psi, num_groups)
        logits = -dist
    else:
        raise ValueError(f"unknown energy function {energy!r}")

    labels = np.eye(b, dtype=np.float64)
    p = _sigmoid(logits)
    loss = float(np.mean(_bce(p, labels)))
    dlogits = ((p - labels) / (b * b)).astype(phi.dtype)
    if energy == "dot_product":
        dphi = dlogits @ psi
        dpsi = dlogits.T @ phi
    elif energy == "l2":
        w = dlogits / dist  # d(-dist)/dphi_i = (psi_j - phi_i)/dist
        dphi = w @ psi - w.sum(axis=1, keepdims=True).reshape(-1, 1) * phi
        dpsi = w.T @ phi - w.sum(axis=0).reshape(-1, 1) * psi
    else:
        dphi, dpsi = quasimetric_pairwise_vjp(q_cache, -dlogits)
    sa_grads, _ = sa_net.backward(sa_params, sa_caches, dphi)
    g_grads, _ = g_net.backward(g_params, g_caches, dpsi)
    return loss, sa_grads, g_grads


def crl_loss(sa_net, g_net, sa_params, g_params, x_sa, x_g,
             energy: str = "dot_product"):
    return contrastive_loss(sa_net, g_net, sa_params, g_params, x_sa, x_g, energy)


def cmd_loss(sa_net, g_net, sa_params, g_params, x_sa, x_g,
             num_groups: int | None = None):
    return contrastive_loss(sa_net, g_net, sa_params, g_params, x_sa, x_g,
                            energy="quasimetric", num_groups=num_groups)


# --- agent ----------------------------------------------------------------------


@dataclass(frozen=True)
class AgentSpec:
    algorithm: str = "dqn_td"
    arch: str = "mlp"
    repr_dim: int = 64
    energy: str = "dot_product"
    target_entropy: float = TARGET_ENTROPY
    temperature_lr: float = 1e-3
    tau_init: float = 1.0
    on_policy_target: bool = False
    target_network_period: int = 0
    quasimetric_groups: int = 8

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}"
            )
        if self.energy not in ("dot_product", "l2"):
            raise ValueError(f"unknown energy function {self.energy!r}")
        if not self.tau_init > 0:
            raise ValueError("tau_init must be positive")


class CriticAgent:
    """Bundles the networks, optimizer state, and temperature for one run."""

    def __init__(self, spec: AgentSpec, grid_size: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.spec = spec
        self.grid_size = grid_size
        self.twin = spec.algorithm in ("crl", "cmd")
        if self.twin:
            self.sa_net = build_network(spec.arch, sa_input_dim(grid_size),
                                        spec.repr_dim, zero_final=True)
            self.g_net = build_network(spec.arch, goal_input_dim(grid_size),
                                       spec.repr_dim, zero_final=False)
            params = {f"sa.{k}": v for k, v in self.sa_net.init_params(rng, dtype).items()}
            params.update(
                {f"g.{k}": v for k, v in self.g_net.init_params(rng, dtype).items()}
            )
        else:
            self.net = build_network(spec.arch, sg_input_dim(grid_size),
                                     N_ACTIONS, zero_final=True)
            params = self.net.init_params(rng, dtype)
        self.params = params
        self.opt_state = AdamState.for_params(params)
        self.tau = spec.tau_init
        self.entropy_estimate: float | None = None
        self.updates_done = 0
        self._target_params = dict(params) if spec.target_network_period > 0 else None

    # -- scoring -----------------------------------------------------------

    def _split(self, params):
        sa = {k[3:]: v for k, v in params.items() if k.startswith("sa.")}
        g = {k[2:]: v for k, v in params.items() if k.startswith("g.")}
        return sa, g

    def goal_embeddings(self, goal_cells: np.ndarray) -> np.ndarray:
        sa_p, g_p = self._split(self.params)
        return self.g_net.forward(g_p, featurize_goal(goal_cells))

    def sa_embeddings(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        sa_p, _ = self._split(self.params)
        return self.sa_net.forward(sa_p, featurize_sa(obs, actions))

    def q_values(self, obs: np.ndarray, goal_cells: np.ndarray,
                 goal_embeddings: np.ndarray | None = None) -> np.ndarray:
        """(N, 6) action scores for each (observation, goal) row.

        For twin critics the goal embeddings may be precomputed once per
        episode and passed back in.
        """
        n = len(obs)
        if not self.twin:
            return self.net.forward(self.params, featurize_sg(obs, goal_cells))
        sa_p, g_p = self._split(self.params)
        if goal_embeddings is None:
            goal_embeddings = self.g_net.forward(g_p, featurize_goal(goal_cells))
        rep_obs = np.repeat(obs, N_ACTIONS, axis=0)
        rep_act = np.tile(np.arange(N_ACTIONS), n)
        phi = self.sa_net.forward(sa_p, featurize_sa(rep_obs, rep_act))
        phi = phi.reshape(n, N_ACTIONS, -1)
        if self.spec.algorithm == "cmd":
            from .nets import quasimetric_distance

            scores = np.empty((n, N_ACTIONS), dtype=phi.dtype)
            for a in range(N_ACTIONS):
                scores[:, a] = -quasimetric_distance(phi[:, a, :], goal_embeddings,
                                                     self.spec.quasimetric_groups)
            return scores
        if self.spec.energy == "l2":
            d2 = ((phi - goal_embeddings[:, None, :]) ** 2).sum(axis=-1)
            return -np.sqrt(d2 + 1e-12)
        return np.einsum("nad,nd->na", phi, goal_embeddings)

    # -- learning ----------------------------------------------------------

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator,
               batch_size: int, discount: float, lr: float,
               future_fraction: float = 0.5, absorbing: bool = True) -> float:
        spec = self.spec
        algo = spec.algorithm
        if algo == "dqn_td":
            batch = buffer.sample_transitions(batch_size, rng, discount,
                                              future_fraction, absorbing)
            x = featurize_sg(batch.obs, batch.goal_cells)
            x_next = featurize_sg(batch.next_obs, batch.goal_cells)
            loss, grads = dqn_td_loss(
                self.net, self.params, x, batch.actions, batch.rewards,
                batch.dones, x_next, discount,
                on_policy_tau=self.tau if spec.on_policy_target else None,
                target_params=self._target_params,
            )
        elif algo == "dqn_mc":
            batch = buffer.sample_relabeled(batch_size, rng, discount,
                                            future_fraction, absorbing)
            x = featurize_sg(batch.obs, batch.goal_cells)
            loss, grads = dqn_mc_loss(self.net, self.params, x, batch.actions,
                                      batch.mc_returns)
        elif algo == "clearn_mc":
            pairs = buffer.sample_future_pairs(batch_size // 2, rng, discount,
                                               sampling="geometric")
            x = np.concatenate([
                featurize_sg(pairs.obs, pairs.pos_goal_cells),
                featurize_sg(pairs.obs, pairs.neg_goal_cells),
            ])
            actions = np.concatenate([pairs.actions, pairs.actions])
            labels = np.concatenate([np.ones(len(pairs.obs)), np.zeros(len(pairs.obs))])
            loss, grads = clearn_mc_loss(self.net, self.params, x, actions, labels)
        elif algo == "clearn_td":
            batch = buffer.sample_transitions(batch_size, rng, discount,
                                              future_fraction, absorbing)
            goal_cells = buffer.random_goal_cells(batch_size, rng)
            q_next = self.q_values(batch.next_obs, goal_cells)
            probs = boltzmann_probs(q_next, self.tau)
            u = rng.random(batch_size)
            next_actions = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
            next_actions = np.minimum(next_actions, N_ACTIONS - 1)
            loss, grads = clearn_td_loss(
                self.net, self.params,
                featurize_sg(batch.obs, batch.next_config),
                featurize_sg(batch.obs, goal_cells),
                batch.actions,
                featurize_sg(batch.next_obs, goal_cells),
                next_actions, discount,
            )
        else:  # crl / cmd
            pairs = buffer.sample_future_pairs(batch_size, rng, discount,
                                               sampling="uniform")
            sa_p, g_p = self._split(self.params)
            energy = "quasimetric" if algo == "cmd" else spec.energy
            loss, sa_grads, g_grads = contrastive_loss(
                self.sa_net, self.g_net, sa_p, g_p,
                featurize_sa(pairs.obs, pairs.actions),
                featurize_goal(pairs.pos_goal_cells),
                energy=energy,
                num_groups=spec.quasimetric_groups if algo == "cmd" else None,
            )
            grads = {f"sa.{k}": v for k, v in sa_grads.items()}
            grads.update({f"g.{k}": v for k, v in g_grads.items()})

        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at update {self.updates_done}")
        self.params, self.opt_state = adam_step(self.params, grads, lr, self.opt_state)
        if not params_finite(self.params):
            raise TrainingDiverged(f"non-finite parameters at update {self.updates_done}")
        self.updates_done += 1
        if self._target_params is not None and \
                self.updates_done % self.spec.target_network_period == 0:
            self._target_params = dict(self.params)
        if self.entropy_estimate is not None:
            self.tau = update_temperature(self.entropy_estimate, self.tau,
                                          spec.target_entropy, spec.temperature_lr)
        return loss

    # -- persistence ---------------------------------------------------------

    def checkpoint_tensors(self) -> tuple[dict[str, np.ndarray], dict]:
        tensors = dict(self.params)
        tensors["tau"] = np.array([self.tau], dtype=np.float64)
        meta = {
            "grid_size": self.grid_size,
            "algorithm": self.spec.algorithm,
            "arch": self.spec.arch,
            "repr_dim": self.spec.repr_dim,
            "energy": self.spec.energy,
            "target_entropy": self.spec.target_entropy,
            "temperature_lr": self.spec.temperature_lr,
            "on_policy_target": self.spec.on_policy_target,
            "target_network_period": self.spec.target_network_period,
            "quasimetric_groups": self.spec.quasimetric_groups,
            "updates_done": self.updates_done,
        }
        return tensors, meta

    @classmethod
    def from_checkpoint(cls, tensors: dict[str, np.ndarray], meta: dict) -> "CriticAgent":
        spec = AgentSpec(
            algorithm=meta["algorithm"],
            arch=meta["arch"],
            repr_dim=meta["repr_dim"],
            energy=meta["energy"],
            target_entropy=meta["target_entropy"],
            temperature_lr=meta["temperature_lr"],
            on_policy_target=meta["on_policy_target"],
            target_network_period=meta["target_network_period"],
            quasimetric_groups=meta["quasimetric_groups"],
        )
        agent = cls(spec, meta["grid_size"], np.random.default_rng(0))
        tau = float(tensors.pop("tau")[0]) if "tau" in tensors else spec.tau_init
        expected = set(agent.params)
        if set(tensors) != expected:
            raise ValueError("checkpoint tensors do not match the architecture")
        for k, v in tensors.items():
            if v.shape != agent.params[k].shape:
                raise ValueError(f"checkpoint shape mismatch for {k}")
        agent.params = dict(tensors)
        agent.opt_state = AdamState.for_params(agent.params)
        agent.tau = tau
        agent.updates_done = int(meta.get("updates_done", 0))
        if agent._target_params is not None:
            agent._target_params = dict(agent.params)
        return agent
