"""Stochastic hazard gridworld."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from respo.mdp import FiniteMdp

log = logging.getLogger(__name__)

# N, E, S, W as (dx, dy) with y growing downwards
MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class GridWorldSpec:
    """Grid of ``width x height`` cells indexed ``y * width + x``.

    With probability ``slip`` the chosen action is replaced by a uniformly random
    one. ``hazards`` maps cells to their cost magnitude. Entering the goal pays
    ``goal_reward`` and ends the episode; every other step pays ``step_reward``.
    """

    width: int
    height: int
    goal: tuple[int, int]
    hazards: dict = field(default_factory=dict)
    walls: frozenset = frozenset()
    starts: tuple | None = None
    slip: float = 0.0
    goal_reward: float = 1.0
    step_reward: float = 0.0
    discount: float = 0.99
    horizon: int = 100
    h_min: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(tuple(w) for w in self.walls))
        object.__setattr__(self, "hazards", {tuple(k): float(v) for k, v in dict(self.hazards).items()})
        object.__setattr__(self, "goal", tuple(self.goal))
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one cell")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip probability must lie in [0, 1)")
        cells = [self.goal, *self.hazards, *self.walls, *(self.starts or ())]
        for x, y in cells:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"cell {(x, y)} outside the grid")
        if self.goal in self.walls:
            raise ValueError("goal cell is a wall")
        if self.starts is not None:
            if not self.starts:
                raise ValueError("start set is empty")
            if any(tuple(s) in self.walls for s in self.starts):
                raise ValueError("start cell is a wall")
        for c, v in self.hazards.items():
            if v < 0:
                raise ValueError(f"hazard {c} has negative cost")
            if 0 < v < self.h_min:
                raise ValueError(f"hazard {c} cost {v} below H_min={self.h_min}")

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def cell(self, s: int) -> tuple[int, int]:
        return s % self.width, s // self.width

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def state_mask(self) -> np.ndarray:
        """True on every non-wall cell."""
        m = np.ones(self.n_states, dtype=bool)
        for x, y in self.walls:
            m[self.index(x, y)] = False
        return m


def _move(spec: GridWorldSpec, x: int, y: int, a: int) -> tuple[int, int]:
    dx, dy = MOVES[a]
    nx, ny = x + dx, y + dy
    if not (0 <= nx < spec.width and 0 <= ny < spec.height) or (nx, ny) in spec.walls:
        return x, y
    return nx, ny


def build_gridworld(spec: GridWorldSpec) -> FiniteMdp:
    """Tabular MDP of ``spec``; the goal and wall cells are absorbing."""
    S, A = spec.n_states, 4
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    h = np.zeros(S)
    goal = spec.index(*spec.goal)
    absorbing = np.zeros(S, dtype=bool)
    for (x, y), v in spec.hazards.items():
        h[spec.index(x, y)] = v
    for s in range(S):
        x, y = spec.cell(s)
        if s == goal or (x, y) in spec.walls:
            P[s, :, s] = 1.0
            absorbing[s] = True
            continue
        for a in range(A):
            for b in range(A):
                w = spec.slip / A + (1.0 - spec.slip if b == a else 0.0)
                t = spec.index(*_move(spec, x, y, b))
                P[s, a, t] += w
                R[s, a] += w * (spec.goal_reward if t == goal else spec.step_reward)
    d0 = np.zeros(S)
    if spec.starts is None:
        d0[spec.state_mask()] = 1.0
        d0[goal] = 0.0
    else:
        for c in spec.starts:
            d0[spec.index(*c)] = 1.0
    d0 /= d0.sum()
    if not _goal_reachable(spec, P, np.flatnonzero(d0), goal):
        log.warning("goal %s is unreachable from every start cell", spec.goal)
    return FiniteMdp(P, R, h, spec.discount, d0, spec.horizon, absorbing, name=f"grid{spec.width}x{spec.height}")


def _goal_reachable(spec, P, starts, goal) -> bool:
    seen = set(int(s) for s in starts)
    queue = deque(seen)
    while queue:
        s = queue.popleft()
        if s == goal:
            return True
        for t in np.flatnonzero(P[s].sum(axis=0)):
            if int(t) not in seen:
                seen.add(int(t))
                queue.append(int(t))
    return False


# -- presets -------------------------------------------------------------------


def hazard_grid_5x5(slip: float = 0.1, horizon: int = 60) -> GridWorldSpec:
    """Goal in the far corner; a hazard pair sits beside the direct route."""
    return GridWorldSpec(5, 5, goal=(4, 4), hazards={(2, 2): 1.0, (3, 1): 1.0}, slip=slip,
                         goal_reward=1.0, step_reward=-0.01, horizon=horizon)


def detour_grid_5x5(horizon: int = 40) -> GridWorldSpec:
    """Deterministic grid whose shortest route crosses a hazard row with a gap at the edge."""
    return GridWorldSpec(5, 5, goal=(2, 4), hazards={(1, 2): 1.0, (2, 2): 1.0, (3, 2): 1.0, (4, 2): 1.0},
                         slip=0.0, goal_reward=1.0, step_reward=-0.02, horizon=horizon)


def detour_grid_6x6(horizon: int = 50) -> GridWorldSpec:
    return GridWorldSpec(6, 6, goal=(3, 5), walls={(0, 4)},
                         hazards={(1, 3): 1.0, (2, 3): 1.0, (3, 3): 1.0, (4, 3): 1.0},
                         slip=0.0, goal_reward=1.0, step_reward=-0.02, horizon=horizon)


def graded_grid_5x5(slip: float = 0.0, horizon: int = 60) -> GridWorldSpec:
    """Small-cost swamp on the left, severe cells flanking the goal corridor; H_delta = 0.5.

    Starts inside the swamp cannot avoid paying, and every route to the goal
    passes next to a severe cell, so slipping makes each approach risky.
    """
    hazards = {(x, y): 0.5 for x in range(2) for y in range(5)}
    hazards.update({(2, 1): 1.0, (3, 1): 1.0, (2, 3): 1.0, (3, 3): 1.0})
    return GridWorldSpec(5, 5, goal=(4, 2), hazards=hazards, slip=slip,
                         goal_reward=1.0, step_reward=-0.01, horizon=horizon)


def open_grid(width: int = 4, height: int = 1, slip: float = 0.0, horizon: int = 20) -> GridWorldSpec:
    """Hazard-free corridor."""
    return GridWorldSpec(width, height, goal=(width - 1, height - 1), slip=slip, goal_reward=1.0,
                         step_reward=-0.01, horizon=horizon)


PRESETS = {
    "hazard5": hazard_grid_5x5,
    "detour5": detour_grid_5x5,
    "detour6": detour_grid_6x6,
    "graded5": graded_grid_5x5,
    "open": open_grid,
}
