"""Episodic environments: three classic-control tasks, a contextual bandit and
a tabular MDP whose trajectory space can be enumerated exactly.

Every environment exposes a single-state API (``reset``/``step``) and a
vectorized batch API (``reset_batch``/``step_batch``) operating on arrays of
shape ``(n, state_dim)``.  The batch API is what the optimizers use; the
single-state API is a thin wrapper around it so both share one set of
dynamics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_ENUMERATION_LEAVES = 10**6


class EnvironmentError_(ValueError):
    """Invalid input to an environment (non-finite action, bad file, ...)."""


@dataclass
class EnvState:
    values: np.ndarray
    step_index: int = 0


@dataclass
class Trajectory:
    """One episode.  ``states`` holds observations, one more than actions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def length(self) -> int:
        return len(self.rewards)

    def discounted_return(self, gamma: float) -> float:
        total, disc = 0.0, 1.0
        for r in self.rewards:
            total += disc * r
            disc *= gamma
        return total


@dataclass
class TrajectoryBatch:
    """Padded stack of episodes.

    ``states`` is ``(n, H+1, obs_dim)``, ``actions`` and ``rewards`` are
    ``(n, H)``.  Steps at or beyond ``lengths[i]`` are padding: their rewards
    are zero and ``mask`` is False there.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    lengths: np.ndarray

    @property
    def n(self) -> int:
        return len(self.lengths)

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.horizon)[None, :] < self.lengths[:, None]

    def discounts(self, gamma: float) -> np.ndarray:
        return discount_vector(gamma, self.horizon)

    def discounted_returns(self, gamma: float) -> np.ndarray:
        return self.rewards @ self.discounts(gamma)

    def undiscounted_returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    def trajectories(self) -> list[Trajectory]:
        return [
            Trajectory(self.states[i, : k + 1].copy(), self.actions[i, :k].copy(), self.rewards[i, :k].copy())
            for i, k in enumerate(self.lengths)
        ]

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory]) -> "TrajectoryBatch":
        if not trajs:
            raise ValueError("cannot batch zero trajectories")
        H = max(t.length for t in trajs)
        n = len(trajs)
        obs_dim = trajs[0].states.shape[1]
        act_dtype = np.result_type(*[t.actions.dtype for t in trajs])
        states = np.zeros((n, H + 1, obs_dim))
        actions = np.zeros((n, H), dtype=act_dtype)
        rewards = np.zeros((n, H))
        for i, t in enumerate(trajs):
            states[i, : t.length + 1] = t.states
            # repeat the last observation into the padding so policies stay finite there
            states[i, t.length + 1 :] = t.states[-1]
            actions[i, : t.length] = t.actions
            rewards[i, : t.length] = t.rewards
        return cls(states, actions, rewards, np.array([t.length for t in trajs]))


def discount_vector(gamma: float, horizon: int) -> np.ndarray:
    # cumulative product rather than gamma**h: same value on every platform
    out = np.empty(horizon)
    disc = 1.0
    for h in range(horizon):
        out[h] = disc
        disc *= gamma
    return out


class Environment:
    """Base class.  Subclasses implement the ``*_batch`` methods."""

    name = "env"
    state_dim: int
    obs_dim: int
    action_low: float = -np.inf
    action_high: float = np.inf
    reward_bound: float
    discrete_actions = False

    def __init__(self, horizon: int):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(horizon)
        self.episode_count = 0

    # -- batch API -------------------------------------------------------
    def reset_batch(self, n: int, rng: np.random.Generator) -> np.ndarray:
        self.episode_count += n
        return self._initial_states(n, rng)

    def _initial_states(self, n, rng):
        raise NotImplementedError

    def step_batch(self, states, actions, rng=None):
        """Advance every row one step.  Returns ``(next_states, rewards, terminal)``.

        ``terminal`` covers only the task's failure/goal condition; horizon
        truncation is the caller's business.
        """
        raise NotImplementedError

    def observe(self, states: np.ndarray) -> np.ndarray:
        return states

    def clip_action(self, actions):
        actions = np.asarray(actions, dtype=float)
        if not np.all(np.isfinite(actions)):
            raise EnvironmentError_("non-finite action")
        return np.clip(actions, self.action_low, self.action_high)

    # -- single-state API ------------------------------------------------
    def reset(self, rng: np.random.Generator) -> EnvState:
        return EnvState(self.reset_batch(1, rng)[0], 0)

    def step(self, state: EnvState, action, rng=None) -> tuple[EnvState, float, bool]:
        if state.step_index >= self.horizon:
            raise EnvironmentError_("episode already reached the horizon")
        a = np.asarray(action)
        if not self.discrete_actions and not np.all(np.isfinite(a.astype(float))):
            raise EnvironmentError_("non-finite action")
        nxt, r, term = self.step_batch(state.values[None], a.reshape(1), rng)
        k = state.step_index + 1
        return EnvState(nxt[0], k), float(r[0]), bool(term[0]) or k == self.horizon


class CartPole(Environment):
    """Cart-pole balancing with a continuous horizontal force in [-10, 10].

    Euler-integrated classic dynamics; the episode fails once the pole leans
    past 12 degrees or the cart leaves [-2.4, 2.4].  +1 reward per step taken.
    """

    name = "cartpole"
    state_dim = obs_dim = 4
    action_low, action_high = -10.0, 10.0
    reward_bound = 1.0

    obs_scale = np.array([2.4, 2.0, 0.21, 2.0])  # failure thresholds; velocities ~2

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    tau = 0.02
    theta_threshold = 12 * 2 * np.pi / 360
    x_threshold = 2.4

    def __init__(self, horizon: int = 100):
        super().__init__(horizon)

    def _initial_states(self, n, rng):
        return rng.uniform(-0.05, 0.05, size=(n, 4))

    def observe(self, states):
        return states / self.obs_scale

    def failed(self, states):
        x, theta = states[:, 0], states[:, 2]
        return (np.abs(x) > self.x_threshold) | (np.abs(theta) > self.theta_threshold)

    def step_batch(self, states, actions, rng=None):
        force = self.clip_action(actions).reshape(-1)
        x, x_dot, theta, theta_dot = states.T
        total_mass = self.masscart + self.masspole
        polemass_length = self.masspole * self.length
        costheta, sintheta = np.cos(theta), np.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sintheta) / total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta**2 / total_mass)
        )
        xacc = temp - polemass_length * thetaacc * costheta / total_mass
        nxt = np.stack(
            [
                x + self.tau * x_dot,
                x_dot + self.tau * xacc,
                theta + self.tau * theta_dot,
                theta_dot + self.tau * thetaacc,
            ],
            axis=1,
        )
        return nxt, np.ones(len(states)), self.failed(nxt)


class MountainCar(Environment):
    """Continuous mountain car: force in [-1, 1], goal at position 0.45.

    Reward is -0.1 a^2 per step plus 100 on reaching the goal.
    """

    name = "mountaincar"
    state_dim = obs_dim = 2
    action_low, action_high = -1.0, 1.0
    reward_bound = 100.0

    min_position, max_position = -1.2, 0.6
    max_speed = 0.07
    goal_position = 0.45
    power = 0.0015

    def __init__(self, horizon: int = 1000):
        super().__init__(horizon)

    def _initial_states(self, n, rng):
        return np.stack([rng.uniform(-0.6, -0.4, size=n), np.zeros(n)], axis=1)

    def step_batch(self, states, actions, rng=None):
        force = self.clip_action(actions).reshape(-1)
        pos, vel = states[:, 0], states[:, 1]
        vel = np.clip(vel + force * self.power - 0.0025 * np.cos(3 * pos), -self.max_speed, self.max_speed)
        pos = np.clip(pos + vel, self.min_position, self.max_position)
        vel = np.where((pos == self.min_position) & (vel < 0), 0.0, vel)
        done = pos >= self.goal_position
        reward = -0.1 * force**2 + np.where(done, 100.0, 0.0)
        return np.stack([pos, vel], axis=1), reward, done


def angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Pendulum(Environment):
    """Torque-limited pendulum swing-up; angle 0 is upright.

    Internal state (angle, angular velocity); observation
    (cos angle, sin angle, angular velocity).  Never terminates early.
    """

    name = "pendulum"
    state_dim = 2
    obs_dim = 3
    action_low, action_high = -2.0, 2.0
    max_speed = 8.0
    g = 10.0
    m = 1.0
    l = 1.0
    dt = 0.05
    reward_bound = np.pi**2 + 0.1 * 8.0**2 + 0.001 * 2.0**2

    def __init__(self, horizon: int = 200):
        super().__init__(horizon)

    def _initial_states(self, n, rng):
        return np.stack([rng.uniform(-np.pi, np.pi, size=n), rng.uniform(-1.0, 1.0, size=n)], axis=1)

    def observe(self, states):
        th, thdot = states[..., 0], states[..., 1]
        return np.stack([np.cos(th), np.sin(th), thdot], axis=-1)

    def step_batch(self, states, actions, rng=None):
        u = self.clip_action(actions).reshape(-1)
        th, thdot = states[:, 0], states[:, 1]
        cost = angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        newthdot = thdot + (3 * self.g / (2 * self.l) * np.sin(th) + 3.0 / (self.m * self.l**2) * u) * self.dt
        newthdot = np.clip(newthdot, -self.max_speed, self.max_speed)
        newth = th + newthdot * self.dt
        return np.stack([newth, newthdot], axis=1), -cost, np.zeros(len(states), dtype=bool)


class ContextualBandit(Environment):
    """Repeated contextual bandit with bounded features and rewards.

    Contexts are i.i.d. uniform on [-1, 1]^k and do not depend on actions.
    Reward ``R * cos(a - w^T s)`` lies in [-R, R].  Used as a linear-Gaussian
    test bed where feature and reward bounds are known exactly.
    """

    name = "bandit"

    def __init__(self, context_dim: int = 2, horizon: int = 1, reward_scale: float = 1.0, weights=None):
        super().__init__(horizon)
        self.state_dim = self.obs_dim = context_dim
        self.reward_bound = float(reward_scale)
        self.weights = np.ones(context_dim) if weights is None else np.asarray(weights, dtype=float)

    def _initial_states(self, n, rng):
        return rng.uniform(-1.0, 1.0, size=(n, self.state_dim))

    def step_batch(self, states, actions, rng=None):
        a = np.asarray(actions, dtype=float).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise EnvironmentError_("non-finite action")
        reward = self.reward_bound * np.cos(a - states @ self.weights)
        if rng is None:
            raise ValueError("bandit contexts are random; pass an rng")
        nxt = rng.uniform(-1.0, 1.0, size=states.shape)
        return nxt, reward, np.zeros(len(states), dtype=bool)


@dataclass
class TabularMdp(Environment):
    """Finite MDP with explicit tables.

    ``transition[s, a, s']`` is row-stochastic, ``reward[s, a]`` bounded,
    ``initial_dist`` the start distribution.  Observations are the state
    index stored as a length-1 float vector.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    horizon: int
    episode_count: int = field(default=0, compare=False)

    name = "tabular"
    discrete_actions = True
    state_dim = obs_dim = 1

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.initial_dist = np.asarray(self.initial_dist, dtype=float)
        S, A = self.reward.shape
        if self.transition.shape != (S, A, S):
            raise ValueError(f"transition shape {self.transition.shape} != {(S, A, S)}")
        if self.initial_dist.shape != (S,):
            raise ValueError("initial distribution has the wrong length")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(axis=2) - 1) > 1e-12):
            raise ValueError("transition rows must be probability vectors")
        if np.any(self.initial_dist < 0) or abs(self.initial_dist.sum() - 1) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(self.horizon)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def reward_bound(self) -> float:
        return float(np.max(np.abs(self.reward)))

    def _initial_states(self, n, rng):
        return _categorical(rng, np.broadcast_to(self.initial_dist, (n, self.n_states)))[:, None].astype(float)

    def step_batch(self, states, actions, rng=None):
        s = np.asarray(states).reshape(-1).astype(int)
        a = np.asarray(actions).reshape(-1)
        if not np.all(np.isfinite(a.astype(float))):
            raise EnvironmentError_("non-finite action")
        a = a.astype(int)
        if np.any((a < 0) | (a >= self.n_actions)):
            raise EnvironmentError_("action index out of range")
        if rng is None:
            raise ValueError("tabular transitions are random; pass an rng")
        nxt = _categorical(rng, self.transition[s, a])
        return nxt[:, None].astype(float), self.reward[s, a], np.zeros(len(s), dtype=bool)

    def clip_action(self, actions):
        return actions

    # -- serialization ---------------------------------------------------
    def dumps(self) -> str:
        S, A = self.n_states, self.n_actions
        lines = [f"{S} {A} {self.horizon}", " ".join(repr(float(p)) for p in self.initial_dist)]
        for s in range(S):
            for a in range(A):
                lines.append(" ".join(repr(float(p)) for p in self.transition[s, a]))
        for s in range(S):
            lines.append(" ".join(repr(float(r)) for r in self.reward[s]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "TabularMdp":
        rows = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
        rows = [r for r in rows if r]
        try:
            S, A, H = (int(x) for x in rows[0])
            rho = np.array(rows[1], dtype=float)
            P = np.array(rows[2 : 2 + S * A], dtype=float).reshape(S, A, S)
            r = np.array(rows[2 + S * A : 2 + S * A + S], dtype=float).reshape(S, A)
        except (ValueError, IndexError) as exc:
            raise EnvironmentError_(f"malformed tabular MDP file: {exc}") from exc
        if len(rows) != 2 + S * A + S:
            raise EnvironmentError_("malformed tabular MDP file: wrong number of rows")
        return cls(P, r, rho, H)

    @classmethod
    def load(cls, path) -> "TabularMdp":
        return cls.loads(Path(path).read_text())


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,))
    idx = (u > cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def random_tabular_mdp(n_states=2, n_actions=2, horizon=3, seed=0, reward_bound=1.0) -> TabularMdp:
    """Seeded random MDP with Dirichlet transition rows and uniform rewards."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-reward_bound, reward_bound, size=(n_states, n_actions))
    rho = rng.dirichlet(np.ones(n_states))
    rho /= rho.sum()
    return TabularMdp(P, r, rho, horizon)


# Seed picked so the instance has no symmetry that zeroes the gradient.
ORACLE_SEED = 7


def default_oracle_mdp() -> TabularMdp:
    """2 states, 2 actions, H = 3, |r| <= 1; the enumeration test bed."""
    return random_tabular_mdp(2, 2, 3, seed=ORACLE_SEED)


def make_env(env_id: str, horizon: int | None = None) -> Environment:
    """Build an environment from ``cartpole | mountaincar | pendulum | tabular:<path>``."""
    if env_id.startswith("tabular:"):
        mdp = TabularMdp.load(env_id.split(":", 1)[1])
        if horizon is not None:
            mdp.horizon = int(horizon)
        return mdp
    table = {"cartpole": CartPole, "mountaincar": MountainCar, "pendulum": Pendulum, "bandit": ContextualBandit}
    if env_id not in table:
        raise ValueError(f"unknown environment {env_id!r}")
    cls = table[env_id]
    return cls() if horizon is None else cls(horizon=horizon)


# -- rollouts ---------------------------------------------------------------

def rollout_batch(env: Environment, action_fn, n: int, horizon: int, rng: np.random.Generator) -> TrajectoryBatch:
    """Roll ``n`` episodes in lockstep.

    ``action_fn(obs, rng, rows)`` maps an ``(k, obs_dim)`` observation array
    to ``k`` actions; ``rows`` are the batch indices of those episodes.  Finished episodes stop drawing actions; their remaining
    slots are padding.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    horizon = min(horizon, env.horizon)
    states = env.reset_batch(n, rng)
    obs = env.observe(states)
    all_obs = np.zeros((n, horizon + 1, env.obs_dim))
    all_obs[:, 0] = obs
    actions = None
    rewards = np.zeros((n, horizon))
    lengths = np.full(n, horizon)
    alive = np.arange(n)
    for h in range(horizon):
        a = np.asarray(action_fn(obs[alive], rng, alive))
        if actions is None:
            actions = np.zeros((n, horizon), dtype=a.dtype)
        actions[alive, h] = a
        nxt, r, term = env.step_batch(states[alive], a, rng)
        states[alive] = nxt
        rewards[alive, h] = r
        obs_alive = env.observe(nxt)
        obs[alive] = obs_alive
        all_obs[alive, h + 1] = obs_alive
        ended = alive[term]
        lengths[ended] = h + 1
        # terminated episodes are absorbing: freeze their last observation
        all_obs[ended, h + 2 :] = obs_alive[term][:, None, :]
        alive = alive[~term]
        if alive.size == 0:
            break
    return TrajectoryBatch(all_obs, actions, rewards, lengths)


def rollout(env: Environment, policy, params, horizon: int, rng: np.random.Generator) -> Trajectory:
    """Sample one episode of ``policy`` with parameters ``params``."""
    batch = rollout_batch(env, lambda obs, g, rows: policy.sample_action(params, obs, g), 1, horizon, rng)
    return batch.trajectories()[0]


def enumerate_trajectories(mdp: TabularMdp, horizon: int | None = None) -> tuple[TrajectoryBatch, np.ndarray]:
    """Every length-``horizon`` path of ``mdp`` with its environment probability.

    Returns a batch whose rows are all ``(s0, a0, s1, ..., a_{H-1}, s_H)``
    paths and ``env_prob = rho(s0) * prod P(s_{h+1} | s_h, a_h)``.  The
    policy factor is left out so one enumeration serves every parameter.
    """
    H = mdp.horizon if horizon is None else int(horizon)
    S, A = mdp.n_states, mdp.n_actions
    leaves = S * (S * A) ** H
    if leaves > MAX_ENUMERATION_LEAVES:
        raise ValueError(f"enumeration would produce {leaves} leaves (limit {MAX_ENUMERATION_LEAVES})")
    paths = np.array(list(itertools.product(range(S), *([range(A), range(S)] * H))), dtype=int).reshape(leaves, -1)
    s = paths[:, 0::2]  # (n, H+1)
    a = paths[:, 1::2]  # (n, H)
    prob = mdp.initial_dist[s[:, 0]].copy()
    rewards = np.zeros((leaves, H))
    for h in range(H):
        prob *= mdp.transition[s[:, h], a[:, h], s[:, h + 1]]
        rewards[:, h] = mdp.reward[s[:, h], a[:, h]]
    batch = TrajectoryBatch(s[:, :, None].astype(float), a, rewards, np.full(leaves, H))
    return batch, prob
