"""Two planar drones that must pass a single-width tunnel.

Cost channels, in order: wall contact (hard), drones too close (hard),
drones too far apart (soft).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from respo.mdp import SparseModel, _as_cdf

N_CHANNELS = 3
WALL, CLOSE, FAR = 0, 1, 2
# stay, +x, -x, +y, -y
DRONE_MOVES = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class DroneTunnelSpec:
    """Arena of ``nx x ny`` lattice points spaced ``cell`` metres apart.

    Wall cells fill columns ``tunnel_cols`` except row ``tunnel_row``. Entering a
    wall cell is possible but registers contact.
    """

    nx: int = 9
    ny: int = 5
    cell: float = 0.5
    tunnel_cols: tuple = (3, 4, 5)
    tunnel_row: int = 2
    starts: tuple = ((0, 1), (1, 2))
    goals: tuple = ((8, 3), (7, 2))
    min_dist: float = 0.5
    max_dist: float = 0.8
    progress: float = 0.1
    time_penalty: float = 0.01
    goal_bonus: float = 1.0
    slip: float = 0.05
    discount: float = 0.99
    horizon: int = 40
    v_max: float = 1.0
    dt: float = 0.5
    noise: float = 0.0
    walls: frozenset = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip must lie in [0, 1)")
        if not 0 < self.min_dist < self.max_dist:
            raise ValueError("need 0 < min_dist < max_dist")
        walls = frozenset((c, r) for c in self.tunnel_cols for r in range(self.ny) if r != self.tunnel_row)
        object.__setattr__(self, "walls", walls)
        for p in (*self.starts, *self.goals):
            if tuple(p) in walls or not (0 <= p[0] < self.nx and 0 <= p[1] < self.ny):
                raise ValueError(f"start/goal {p} must be a free arena cell")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_index(self, x: int, y: int) -> int:
        return x * self.ny + y

    def joint_index(self, c1: int, c2: int) -> int:
        return c1 * self.n_cells + c2

    def wall_boxes(self) -> np.ndarray:
        """``[n, 4]`` rectangles ``(x0, y0, x1, y1)`` in metres."""
        h = self.cell / 2
        return np.array([(x * self.cell - h, y * self.cell - h, x * self.cell + h, y * self.cell + h)
                         for x, y in sorted(self.walls)])


def cost_channels(p1, p2, spec: DroneTunnelSpec) -> np.ndarray:
    """``[..., 3]`` costs for drone positions in metres."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    boxes = spec.wall_boxes()

    def in_wall(p):
        x, y = p[..., 0, None], p[..., 1, None]
        inside = (x > boxes[:, 0]) & (x < boxes[:, 2]) & (y > boxes[:, 1]) & (y < boxes[:, 3])
        return inside.any(axis=-1)

    d = np.linalg.norm(p1 - p2, axis=-1)
    out = np.zeros(np.broadcast_shapes(d.shape) + (N_CHANNELS,))
    out[..., WALL] = (in_wall(p1) | in_wall(p2)).astype(np.float64)
    out[..., CLOSE] = (d <= spec.min_dist).astype(np.float64)
    out[..., FAR] = (d >= spec.max_dist).astype(np.float64)
    return out


def _goal_distance(p, goal_m):
    return np.sum(np.abs(p - goal_m), axis=-1)


def drone_tunnel_step(state, actions, rng=None, spec: DroneTunnelSpec | None = None):
    """Velocity-commanded step of both drones; returns ``(next_state, reward, costs)``.

    ``state`` is ``[x1, y1, x2, y2]`` in metres, ``actions`` a ``[2, 2]`` velocity
    command clipped to ``v_max``. Positions are projected back into the arena;
    wall cells are not blocking, touching them shows up in the wall channel.
    """
    spec = spec or DroneTunnelSpec()
    s = np.asarray(state, dtype=np.float64).reshape(4)
    a = np.asarray(actions, dtype=np.float64).reshape(2, 2)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise ValueError("non-finite drone state or action")
    a = np.clip(a, -spec.v_max, spec.v_max)
    pos = s.reshape(2, 2) + a * spec.dt
    if spec.noise > 0 and rng is not None:
        pos = pos + spec.noise * rng.standard_normal(pos.shape)
    hi = np.array([(spec.nx - 1) * spec.cell, (spec.ny - 1) * spec.cell])
    pos = np.clip(pos, 0.0, hi)
    goals = np.asarray(spec.goals, dtype=np.float64) * spec.cell
    before = _goal_distance(s.reshape(2, 2), goals).sum()
    after = _goal_distance(pos, goals).sum()
    reward = spec.progress * (before - after) / spec.cell - spec.time_penalty
    return pos.reshape(4), float(reward), cost_channels(pos[0], pos[1], spec)


class DroneTunnelEnv:
    state_dim = 4
    action_dim = 4

    def __init__(self, spec: DroneTunnelSpec | None = None):
        self.spec = spec or DroneTunnelSpec()
        self.action_low = -self.spec.v_max * np.ones(4)
        self.action_high = self.spec.v_max * np.ones(4)
        self.horizon = self.spec.horizon

    def reset(self, rng=None) -> np.ndarray:
        return (np.asarray(self.spec.starts, dtype=np.float64) * self.spec.cell).reshape(4)

    def step(self, state, action, rng=None):
        nxt, r, c = drone_tunnel_step(state, np.asarray(action).reshape(2, 2), rng, self.spec)
        goals = np.asarray(self.spec.goals, dtype=np.float64).reshape(4) * self.spec.cell
        done = bool(np.allclose(nxt, goals, atol=1e-9))
        return nxt, r, c, done


def lattice_model(spec: DroneTunnelSpec | None = None) -> SparseModel:
    """Joint lattice MDP of both drones (25 joint actions) in successor-list form.

    Each drone's move is replaced by "stay" with probability ``slip``. The joint
    goal configuration is absorbing.
    """
    spec = spec or DroneTunnelSpec()
    C = spec.n_cells
    S, A = C * C, len(DRONE_MOVES) ** 2
    xy = np.array([(x, y) for x in range(spec.nx) for y in range(spec.ny)])
    pos_m = xy * spec.cell
    goals = np.asarray(spec.goals) * spec.cell
    # per-drone deterministic move table
    move = np.zeros((C, len(DRONE_MOVES)), dtype=np.int64)
    for c, (x, y) in enumerate(xy):
        for k, (dx, dy) in enumerate(DRONE_MOVES):
            nx_, ny_ = min(max(x + dx, 0), spec.nx - 1), min(max(y + dy, 0), spec.ny - 1)
            move[c, k] = spec.cell_index(nx_, ny_)
    c1 = np.repeat(np.arange(C), C)
    c2 = np.tile(np.arange(C), C)
    costs = cost_channels(pos_m[c1], pos_m[c2], spec).T.copy()
    dist = _goal_distance(pos_m[c1], goals[0]) + _goal_distance(pos_m[c2], goals[1])
    goal_state = spec.joint_index(spec.cell_index(*spec.goals[0]), spec.cell_index(*spec.goals[1]))
    absorbing = np.zeros(S, dtype=bool)
    absorbing[goal_state] = True

    succ = np.zeros((S, A, 4), dtype=np.int64)
    prob = np.zeros((S, A, 4))
    stay = 1.0 - spec.slip
    for a, (k1, k2) in enumerate(product(range(len(DRONE_MOVES)), repeat=2)):
        m1 = move[c1, k1]
        m2 = move[c2, k2]
        outcomes = ((m1, m2, stay * stay), (c1, m2, spec.slip * stay),
                    (m1, c2, stay * spec.slip), (c1, c2, spec.slip * spec.slip))
        for j, (n1, n2, w) in enumerate(outcomes):
            succ[:, a, j] = n1 * C + n2
            prob[:, a, j] = w
    # merge duplicate successors so each row lists distinct states
    reward = np.zeros((S, A))
    for s in range(S):
        if absorbing[s]:
            succ[s] = s
            prob[s] = 0.0
            prob[s, :, 0] = 1.0
            continue
        for a in range(A):
            row_s, row_p = succ[s, a], prob[s, a]
            uniq, inv = np.unique(row_s, return_inverse=True)
            p = np.bincount(inv, weights=row_p, minlength=uniq.size)
            keep = p > 0
            uniq, p = uniq[keep], p[keep]
            succ[s, a, : uniq.size] = uniq
            succ[s, a, uniq.size:] = uniq[-1]
            prob[s, a, : uniq.size] = p
            prob[s, a, uniq.size:] = 0.0
            r = spec.progress * (dist[s] - dist[uniq]) / spec.cell - spec.time_penalty
            r = r + np.where(uniq == goal_state, spec.goal_bonus, 0.0)
            reward[s, a] = float(np.dot(p, r))
    init = np.zeros(S)
    init[spec.joint_index(spec.cell_index(*spec.starts[0]), spec.cell_index(*spec.starts[1]))] = 1.0
    return SparseModel(succ=succ, cdf=_as_cdf(prob), reward=reward, costs=costs, absorbing=absorbing,
                       init_cdf=_as_cdf(init), discount=spec.discount, horizon=spec.horizon)
