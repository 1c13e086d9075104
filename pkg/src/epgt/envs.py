"""Native episodic environments: CartPole, MountainCarContinuous, SparseGrid.

Dynamics follow the widely published classic-control equations (Euler
integration, standard constants) so runs are comparable to gym-based
results. Termination (physics) and truncation (episode cap) are reported
separately so advantage estimates can bootstrap at caps.

Each instance owns its RNG and is single-threaded; separate instances share
nothing.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool


class Env:
    """Shared bookkeeping: step counter, episode cap, RNG, reset discipline."""

    id = "env"
    episode_cap = 0
    observation_dim = 0
    discrete = True
    n_actions = 0
    action_dim = 0
    action_low = None
    action_high = None

    def __init__(self, seed=None):
        self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._needs_reset = True
        self.episode_return = 0.0

    def reset(self, seed=None):
        """Start a new episode; reseeds the RNG when ``seed`` is given."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._needs_reset = False
        self.episode_return = 0.0
        self._reset_state()
        return self.observation()

    def step(self, action):
        if self._needs_reset:
            raise RuntimeError(f"{self.id}: step() called before reset or after episode end")
        self._validate_action(action)
        reward, done = self._transition(action)
        self._steps += 1
        self.episode_return += reward
        truncated = (not done) and self._steps >= self.episode_cap
        if done or truncated:
            self._needs_reset = True
        obs = self.observation()
        if not np.all(np.isfinite(obs)):
            raise RuntimeError(f"{self.id}: non-finite observation {obs}")
        return StepResult(obs, float(reward), bool(done), bool(truncated))

    @property
    def needs_reset(self):
        return self._needs_reset

    @property
    def steps_taken(self):
        return self._steps

    def observation(self):
        raise NotImplementedError

    def _reset_state(self):
        raise NotImplementedError

    def _transition(self, action):
        raise NotImplementedError

    def _validate_action(self, action):
        if self.discrete:
            a = int(action)
            if not 0 <= a < self.n_actions:
                raise ValueError(f"{self.id}: action {action} outside [0, {self.n_actions})")


class CartPole(Env):
    """Pole balancing: discrete push left/right, +1 reward per step alive.

    Constants: gravity 9.8, cart mass 1.0, pole mass 0.1, half-length 0.5,
    force 10, tau 0.02. Terminates on |x| > 2.4 or |theta| > 12 degrees;
    truncates at 500 steps.
    """

    id = "cartpole"
    episode_cap = 500
    observation_dim = 4
    discrete = True
    n_actions = 2

    GRAVITY = 9.8
    CART_MASS = 1.0
    POLE_MASS = 0.1
    HALF_LENGTH = 0.5
    FORCE = 10.0
    TAU = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12.0 * math.pi / 180.0

    def _reset_state(self):
        self._state = self._rng.uniform(-0.05, 0.05, size=4)

    def observation(self):
        return self._state.copy()

    def _transition(self, action):
        x, x_dot, theta, theta_dot = self._state
        force = self.FORCE if int(action) == 1 else -self.FORCE
        total_mass = self.CART_MASS + self.POLE_MASS
        pole_ml = self.POLE_MASS * self.HALF_LENGTH
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + pole_ml * theta_dot ** 2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.POLE_MASS * cos_t ** 2 / total_mass)
        )
        x_acc = temp - pole_ml * theta_acc * cos_t / total_mass
        x += self.TAU * x_dot
        x_dot += self.TAU * x_acc
        theta += self.TAU * theta_dot
        theta_dot += self.TAU * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])
        done = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        return 1.0, done


class MountainCarContinuous(Env):
    """Underpowered car in a valley, continuous force in [-1, 1].

    Reward is -0.1 * a^2 per step plus +100 on reaching x >= 0.45;
    truncates at 999 steps. Start: position uniform[-0.6, -0.4], velocity 0.
    """

    id = "mountaincar_continuous"
    episode_cap = 999
    observation_dim = 2
    discrete = False
    action_dim = 1
    action_low = -1.0
    action_high = 1.0

    POWER = 0.0015
    MAX_SPEED = 0.07
    MIN_POSITION = -1.2
    MAX_POSITION = 0.6
    GOAL_POSITION = 0.45

    def _reset_state(self):
        self._state = np.array([self._rng.uniform(-0.6, -0.4), 0.0])

    def observation(self):
        return self._state.copy()

    def _transition(self, action):
        force = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        position, velocity = self._state
        velocity += force * self.POWER - 0.0025 * math.cos(3.0 * position)
        velocity = min(max(velocity, -self.MAX_SPEED), self.MAX_SPEED)
        position += velocity
        position = min(max(position, self.MIN_POSITION), self.MAX_POSITION)
        if position <= self.MIN_POSITION and velocity < 0.0:
            velocity = 0.0
        self._state = np.array([position, velocity])
        done = position >= self.GOAL_POSITION
        reward = -0.1 * force ** 2
        if done:
            reward += 100.0
        return reward, done


class SparseGrid(Env):
    """5x5 deterministic grid, fixed start (0,0) and goal (4,4).

    Discrete moves up/down/left/right clamped at the walls; reward 1 only on
    entering the goal cell; truncates at 100 steps. A fast sparse-reward
    sanity environment, not from any benchmark suite.
    """

    id = "sparsegrid"
    episode_cap = 100
    observation_dim = 2
    discrete = True
    n_actions = 4

    SIZE = 5
    GOAL = (4, 4)
    MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right

    def _reset_state(self):
        self._pos = (0, 0)

    def observation(self):
        scale = self.SIZE - 1
        return np.array([self._pos[0] / scale, self._pos[1] / scale])

    def _transition(self, action):
        dr, dc = self.MOVES[int(action)]
        r = min(max(self._pos[0] + dr, 0), self.SIZE - 1)
        c = min(max(self._pos[1] + dc, 0), self.SIZE - 1)
        self._pos = (r, c)
        if self._pos == self.GOAL:
            return 1.0, True
        return 0.0, False


ENVIRONMENTS = {
    CartPole.id: CartPole,
    MountainCarContinuous.id: MountainCarContinuous,
    SparseGrid.id: SparseGrid,
}


def make_env(env_id, seed=None):
    """Instantiate an environment by string id."""
    try:
        cls = ENVIRONMENTS[env_id]
    except KeyError:
        raise ValueError(f"unknown environment {env_id!r}; known: {sorted(ENVIRONMENTS)}")
    return cls(seed=seed)
