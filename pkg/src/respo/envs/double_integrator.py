"""Double integrator with a box state constraint."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

A_MAX = 0.5
BOX = 5.0


@dataclass(frozen=True)
class DoubleIntegratorSpec:
    dt: float = 0.1
    a_max: float = A_MAX
    box: float = BOX
    horizon: int = 200
    reward_scale: float = 0.01
    noise: float = 0.0
    start_low: tuple = (-1.0, -1.0)
    start_high: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.a_max <= 0 or self.box <= 0:
            raise ValueError("action bound and box must be positive")


def state_cost(state, box: float = BOX):
    """1 outside the box ``||s||_inf <= box``, else 0 (vectorised over leading axes)."""
    s = np.asarray(state, dtype=np.float64)
    return (np.max(np.abs(s), axis=-1) > box).astype(np.float64)


def state_reward(state, scale: float = 0.01):
    s = np.asarray(state, dtype=np.float64)
    return -scale * np.sum(s * s, axis=-1)


def double_integrator_step(state, action, dt: float = 0.1, a_max: float = A_MAX, box: float = BOX,
                           reward_scale: float = 0.01):
    """Semi-implicit Euler step; returns ``(next_state, reward, cost)``.

    Reward is charged on the current state, cost on the next one. Works on a
    single state ``[2]`` or a batch ``[n, 2]``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError(f"non-finite state {s}")
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(np.shape(s)[:-1]), -a_max, a_max)
    v = s[..., 1] + a * dt
    x = s[..., 0] + v * dt
    nxt = np.stack([x, v], axis=-1)
    return nxt, state_reward(s, reward_scale), state_cost(nxt, box)


class DoubleIntegratorEnv:
    state_dim = 2
    action_dim = 1

    def __init__(self, spec: DoubleIntegratorSpec | None = None):
        self.spec = spec or DoubleIntegratorSpec()
        self.action_low = np.array([-self.spec.a_max])
        self.action_high = np.array([self.spec.a_max])
        self.horizon = self.spec.horizon
        self.dt = self.spec.dt

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.spec.start_low, self.spec.start_high)

    def step(self, state, action, rng: np.random.Generator | None = None):
        a = float(np.asarray(action).reshape(-1)[0])
        if abs(a) > self.spec.a_max + 1e-12:
            raise ValueError(f"action {a} outside [-{self.spec.a_max}, {self.spec.a_max}]")
        nxt, r, c = self.step_batch(np.asarray(state)[None, :], np.array([a]), rng)
        return nxt[0], float(r[0]), float(c[0]), False

    def step_batch(self, states, actions, rng: np.random.Generator | None = None):
        sp = self.spec
        nxt, r, c = double_integrator_step(states, actions, sp.dt, sp.a_max, sp.box, sp.reward_scale)
        if sp.noise > 0 and rng is not None:
            nxt = nxt + sp.noise * sp.dt * rng.standard_normal(nxt.shape)
            c = state_cost(nxt, sp.box)
        return nxt, r, c

    def cost(self, states):
        return state_cost(states, self.spec.box)

    def reward(self, states):
        return state_reward(states, self.spec.reward_scale)


def stoppable(states, a_max: float = A_MAX, box: float = BOX) -> np.ndarray:
    """Continuous-time set from which full braking stops inside the box."""
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    x, v = s[:, 0], s[:, 1]
    stop = x + v * np.abs(v) / (2.0 * a_max)
    return (np.abs(stop) <= box) & (np.abs(x) <= box) & (np.abs(v) <= box)


def discretized_double_integrator(resolution: int = 41, extent: float = 6.0, n_levels: int = 5,
                                  hold_steps: int = 12, n_mc_samples: int = 1, rng=None,
                                  discount: float = 0.99, spec: DoubleIntegratorSpec | None = None):
    """Square grid on ``[-extent, extent]^2``; returns ``(mdp, grid)``.

    Each tabular step holds the action for ``hold_steps`` integration steps so
    that a single step moves the state across cell boundaries.
    """
    from respo.envs.discretize import discretize, make_grid

    env = DoubleIntegratorEnv(spec)
    grid = make_grid([-extent, -extent], [extent, extent], resolution)
    levels = np.linspace(-env.spec.a_max, env.spec.a_max, n_levels)
    mdp = discretize(env, grid, levels, n_mc_samples, rng, discount=discount, hold_steps=hold_steps)
    return mdp, grid
