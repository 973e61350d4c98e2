"""Self-contained episodic environments: CartPole and Doors.

Both follow a small gym-like protocol: ``reset(seed=None)`` returns the first
observation, ``step(action)`` returns a :class:`StepResult`. Environments are
selected by name through :func:`make_env`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool


class EpisodeOver(RuntimeError):
    """Raised when ``step`` is called on a finished episode."""


# Cart-pole constants (classic-control values)
GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
X_LIMIT = 2.4
THETA_LIMIT = 12 * 2 * math.pi / 360


def cartpole_dynamics(
    state: tuple[float, float, float, float], action: int
) -> tuple[float, float, float, float]:
    """One explicit-Euler step of the cart-pole equations of motion.

    ``state`` is ``(x, x_dot, theta, theta_dot)``; action 1 pushes right.
    """
    x, x_dot, theta, theta_dot = state
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t * cos_t / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    return (
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    )


class CartPoleEnv:
    """Pole balancing on a cart, reward 1.0 per step, capped at 500 steps."""

    name = "cartpole"
    observation_dim = 4
    action_dim = 2

    def __init__(self, max_episode_steps: int = 500):
        self.max_episode_steps = max_episode_steps
        self.rng = np.random.default_rng()
        self.state = (0.0, 0.0, 0.0, 0.0)
        self.step_count = 0
        self.done = True

    @property
    def observation(self) -> np.ndarray:
        return np.array(self.state)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = tuple(float(v) for v in self.rng.uniform(-0.05, 0.05, size=4))
        self.step_count = 0
        self.done = False
        return self.observation

    def set_state(self, state) -> None:
        """Place the cart at an arbitrary state and start a new episode from it."""
        self.state = tuple(float(v) for v in state)
        self.step_count = 0
        self.done = False

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeOver("episode finished; call reset()")
        if action not in (0, 1):
            raise ValueError(f"cartpole action must be 0 or 1, got {action!r}")
        self.state = cartpole_dynamics(self.state, action)
        self.step_count += 1
        x, _, theta, _ = self.state
        self.done = (
            abs(x) > X_LIMIT
            or abs(theta) > THETA_LIMIT
            or self.step_count >= self.max_episode_steps
        )
        return StepResult(self.observation, 1.0, self.done)


@dataclass(frozen=True)
class DoorsSpec:
    """Reward layout of the doors game.

    Every ``period``-th door pays ``periodic_reward``, the last door pays
    ``jackpot_reward`` and all others pay ``base_reward``.
    """

    num_doors: int = 8
    base_reward: float = 1.5
    periodic_reward: float = 4.5
    period: int = 3
    jackpot_reward: float = 1000.0
    episode_length: int = 16

    def __post_init__(self) -> None:
        if self.num_doors < 1 or self.period < 1 or self.episode_length < 1:
            raise ValueError("num_doors, period and episode_length must be positive")

    def reward(self, door: int) -> float:
        if door == self.num_doors - 1:
            return self.jackpot_reward
        if (door + 1) % self.period == 0:
            return self.periodic_reward
        return self.base_reward


class DoorsEnv:
    """Repeated choice among ``num_doors`` doors with a constant observation."""

    name = "doors"
    observation_dim = 1

    def __init__(self, spec: DoorsSpec | None = None, **kwargs):
        self.spec = spec if spec is not None else DoorsSpec(**kwargs)
        self.action_dim = self.spec.num_doors
        self.max_episode_steps = self.spec.episode_length
        self.rng = np.random.default_rng()
        self.step_count = 0
        self.done = True

    @property
    def observation(self) -> np.ndarray:
        return np.ones(1)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.step_count = 0
        self.done = False
        return self.observation

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeOver("episode finished; call reset()")
        if not 0 <= action < self.spec.num_doors:
            raise ValueError(f"door index must be in [0, {self.spec.num_doors}), got {action!r}")
        self.step_count += 1
        self.done = self.step_count >= self.spec.episode_length
        return StepResult(self.observation, self.spec.reward(int(action)), self.done)


ENVIRONMENTS = {"cartpole": CartPoleEnv, "doors": DoorsEnv}


def make_env(name: str, **options):
    """Build an environment by name (``"cartpole"`` or ``"doors"``)."""
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**options)


def reset(name: str, seed: int, **options):
    """Create the named environment and reset it with ``seed``."""
    env = make_env(name, **options)
    env.reset(seed=seed)
    return env
