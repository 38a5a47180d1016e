"""Environments and trajectory collection.

Two families live here. ``TabularMdp`` is a finite MDP that the exact oracle
can enumerate. The continuous tasks (``pendulum_swingup``,
``cartpole_swingup_sparse``, ``pointmass_easy``) are small deterministic
simulators integrated with a fixed-step semi-implicit Euler scheme; they stand
in for the much larger control-suite tasks and are tuned so a laptop can train
on them in minutes.

Physical constants are class attributes so they show up in one place; the
README lists them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from gpi.exceptions import ConfigurationError


# ---------------------------------------------------------------- tabular MDPs

@dataclass
class TabularMdp:
    """Finite discounted MDP with transition tensor ``transition[s, a, s']``."""

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        S, A = self.reward.shape
        if self.transition.shape != (S, A, S):
            raise ConfigurationError(f"transition has shape {self.transition.shape}, expected {(S, A, S)}")
        if self.initial_dist.shape != (S,):
            raise ConfigurationError("initial_dist length must equal num_states")
        if not np.allclose(self.transition.sum(axis=2), 1.0, rtol=0, atol=1e-9) or np.any(self.transition < 0):
            raise ConfigurationError("transition rows must be probability vectors")
        if abs(self.initial_dist.sum() - 1.0) > 1e-9 or np.any(self.initial_dist < 0):
            raise ConfigurationError("initial_dist must be a probability vector")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise ConfigurationError("rewards must lie in [0, 1]")
        if not 0.0 < self.discount < 1.0:
            raise ConfigurationError("discount must lie in (0, 1)")

    @property
    def num_states(self):
        return self.reward.shape[0]

    @property
    def num_actions(self):
        return self.reward.shape[1]


def make_random_tabular(num_states, num_actions, seed, discount=0.9):
    """Random MDP with Dirichlet(1) transition rows and uniform [0, 1] rewards."""
    if num_states < 2 or num_actions < 2:
        raise ConfigurationError("need at least two states and two actions")
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    reward = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    initial_dist = rng.dirichlet(np.ones(num_states))
    return TabularMdp(transition, reward, initial_dist, discount)


# ------------------------------------------------------------ continuous tasks

class ContinuousEnv:
    """Deterministic continuous-control task with a seeded reset distribution.

    Subclasses implement ``_reset_state``, ``_integrate``, ``_observe`` and
    ``_reward``. The physical state is kept separately from the observation so
    that stepping is an exact function of (physical state, action).
    """

    name = "continuous"
    state_dim = 0
    action_dim = 0
    action_low = -1.0
    action_high = 1.0
    dt = 0.01

    def __init__(self, horizon=1000):
        if horizon < 1:
            raise ConfigurationError("horizon must be positive")
        self.horizon = int(horizon)
        self._phys = None
        self._t = 0

    def __repr__(self):
        return f"{type(self).__name__}(horizon={self.horizon})"

    def reset(self, rng):
        self._phys = self._reset_state(rng)
        self._t = 0
        return self._observe(self._phys)

    def step(self, action):
        """Advance one step with the clipped action.

        Returns ``(observation, reward, terminated, truncated)``. None of the
        built-in tasks terminate early; ``truncated`` marks the horizon.
        """
        if self._phys is None:
            raise RuntimeError("call reset() before step()")
        a = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)
        self._phys = self._integrate(self._phys, a)
        self._t += 1
        reward = float(np.clip(self._reward(self._phys, a), 0.0, 1.0))
        return self._observe(self._phys), reward, False, self._t >= self.horizon

    @property
    def physical_state(self):
        return None if self._phys is None else self._phys.copy()


class PendulumSwingup(ContinuousEnv):
    """Torque-limited pendulum starting near the bottom.

    Angle ``theta`` is measured from upright. Observation is
    (cos theta, sin theta, theta_dot); reward is ((1 + cos theta) / 2)^2.
    """

    name = "pendulum_swingup"
    state_dim = 3
    action_dim = 1
    gravity = 9.81
    mass = 1.0
    length = 1.0
    max_torque = 4.0
    max_speed = 8.0
    dt = 0.02

    def _reset_state(self, rng):
        return np.array([np.pi + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)])

    def _integrate(self, phys, a):
        theta, omega = phys
        accel = (self.gravity / self.length) * np.sin(theta) + self.max_torque * a[0] / (self.mass * self.length ** 2)
        omega = np.clip(omega + self.dt * accel, -self.max_speed, self.max_speed)
        theta = theta + self.dt * omega
        theta = (theta + np.pi) % (2.0 * np.pi) - np.pi
        return np.array([theta, omega])

    def _observe(self, phys):
        return np.array([np.cos(phys[0]), np.sin(phys[0]), phys[1]])

    def _reward(self, phys, a):
        return (0.5 * (1.0 + np.cos(phys[0]))) ** 2


class CartpoleSwingupSparse(ContinuousEnv):
    """Cart-pole swing-up with reward only near upright.

    Physical state is (x, x_dot, theta, theta_dot) with theta from upright;
    observation is (x, x_dot, cos theta, sin theta, theta_dot). The cart is
    confined to ``|x| <= track_limit`` by an inelastic stop. Reward is 1 when
    the pole is within ``upright_deg`` of vertical and 0 otherwise.
    """

    name = "cartpole_swingup_sparse"
    state_dim = 5
    action_dim = 1
    gravity = 9.81
    cart_mass = 1.0
    pole_mass = 0.1
    half_length = 0.5
    max_force = 10.0
    track_limit = 2.0
    upright_deg = 15.0
    dt = 0.02

    def _reset_state(self, rng):
        return np.array([rng.uniform(-0.1, 0.1), 0.0, np.pi + rng.uniform(-0.1, 0.1), 0.0])

    def _integrate(self, phys, a):
        x, x_dot, theta, theta_dot = phys
        force = self.max_force * a[0]
        total = self.cart_mass + self.pole_mass
        sin, cos = np.sin(theta), np.cos(theta)
        tmp = (force + self.pole_mass * self.half_length * theta_dot ** 2 * sin) / total
        theta_acc = (self.gravity * sin - cos * tmp) / (
            self.half_length * (4.0 / 3.0 - self.pole_mass * cos ** 2 / total))
        x_acc = tmp - self.pole_mass * self.half_length * theta_acc * cos / total
        x_dot = x_dot + self.dt * x_acc
        theta_dot = theta_dot + self.dt * theta_acc
        x = x + self.dt * x_dot
        theta = theta + self.dt * theta_dot
        if abs(x) > self.track_limit:
            x, x_dot = np.sign(x) * self.track_limit, 0.0
        theta = (theta + np.pi) % (2.0 * np.pi) - np.pi
        return np.array([x, x_dot, theta, theta_dot])

    def _observe(self, phys):
        x, x_dot, theta, theta_dot = phys
        return np.array([x, x_dot, np.cos(theta), np.sin(theta), theta_dot])

    def _reward(self, phys, a):
        return 1.0 if np.cos(phys[2]) >= np.cos(np.deg2rad(self.upright_deg)) else 0.0


class PointMassEasy(ContinuousEnv):
    """Damped planar point mass that should settle on the origin.

    Observation is (x, y, vx, vy); reward is max(0, 1 - distance / target_radius).
    """

    name = "pointmass_easy"
    state_dim = 4
    action_dim = 2
    arena = 1.0
    gain = 2.0
    damping = 1.0
    target_radius = 0.3
    dt = 0.02

    def _reset_state(self, rng):
        return np.concatenate([rng.uniform(-self.arena, self.arena, 2), np.zeros(2)])

    def _integrate(self, phys, a):
        pos, vel = phys[:2], phys[2:]
        vel = vel + self.dt * (self.gain * a - self.damping * vel)
        pos = pos + self.dt * vel
        hit = np.abs(pos) > self.arena
        pos = np.where(hit, np.sign(pos) * self.arena, pos)
        vel = np.where(hit, 0.0, vel)
        return np.concatenate([pos, vel])

    def _observe(self, phys):
        return phys.copy()

    def _reward(self, phys, a):
        return max(0.0, 1.0 - np.linalg.norm(phys[:2]) / self.target_radius)


BUILTIN_ENVS = {
    cls.name: cls for cls in (PendulumSwingup, CartpoleSwingupSparse, PointMassEasy)
}


def builtin_env(name, horizon=1000):
    try:
        cls = BUILTIN_ENVS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {name!r}; valid names: {', '.join(sorted(BUILTIN_ENVS))}") from None
    return cls(horizon=horizon)


# ------------------------------------------------------------------ collection

class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminated: bool
    truncated: bool
    behavior_logprob: float
    policy_age: int


@dataclass
class Transitions:
    """A time-ordered batch of transitions stored column-wise.

    ``actions`` are the raw Gaussian samples; the environment saw them clipped
    to its action bounds. ``truncated`` marks horizon cut-offs and
    ``terminated`` true terminal states (bootstrapped with zero).
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    behavior_logprob: np.ndarray
    policy_age: int = 0
    episode_returns: list = field(default_factory=list)

    def __len__(self):
        return len(self.rewards)

    def __getitem__(self, t):
        return Transition(self.states[t], self.actions[t], float(self.rewards[t]), self.next_states[t],
                          bool(self.terminated[t]), bool(self.truncated[t]),
                          float(self.behavior_logprob[t]), self.policy_age)

    def __iter__(self):
        return (self[t] for t in range(len(self)))

    @property
    def dones(self):
        return self.terminated | self.truncated


class Sampler:
    """Runs a policy in one environment, carrying episodes across batches.

    Resets and action noise use separate generators spawned from ``seed`` so
    that the environment stream can be replayed without the policy.
    """

    def __init__(self, env, seed):
        self.env = env
        env_seq, act_seq = np.random.SeedSequence(seed).spawn(2)
        self.env_rng = np.random.default_rng(env_seq)
        self.act_rng = np.random.default_rng(act_seq)
        self._obs = None
        self._episode_return = 0.0
        self.completed_returns = []

    def collect(self, policy, n):
        env = self.env
        if n < 1:
            raise ConfigurationError("sample count must be at least 1")
        if policy.obs_dim != env.state_dim or policy.act_dim != env.action_dim:
            raise ConfigurationError(
                f"policy dims ({policy.obs_dim}, {policy.act_dim}) do not match "
                f"{env.name} ({env.state_dim}, {env.action_dim})")
        states = np.empty((n, env.state_dim))
        actions = np.empty((n, env.action_dim))
        next_states = np.empty((n, env.state_dim))
        rewards = np.empty(n)
        terminated = np.zeros(n, dtype=bool)
        truncated = np.zeros(n, dtype=bool)
        finished = []
        if self._obs is None:
            self._obs = env.reset(self.env_rng)
        for t in range(n):
            a = policy.sample(self._obs, self.act_rng)
            obs, r, term, trunc = env.step(a)
            states[t], actions[t], next_states[t], rewards[t] = self._obs, a, obs, r
            terminated[t], truncated[t] = term, trunc
            self._episode_return += r
            if term or trunc:
                finished.append(self._episode_return)
                self._episode_return = 0.0
                obs = env.reset(self.env_rng)
            self._obs = obs
        self.completed_returns.extend(finished)
        logp = policy.log_prob(states, actions)
        return Transitions(states, actions, rewards, next_states, terminated, truncated, logp,
                           episode_returns=finished)


def collect(env, policy, n, seed):
    """Collect exactly ``n`` transitions from a fresh episode."""
    return Sampler(env, seed).collect(policy, n)
