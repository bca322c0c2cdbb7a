"""Grid discretization of continuous environments into tabular MDPs."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from respo.mdp import FiniteMdp

log = logging.getLogger(__name__)

MAX_CELLS = 50_000
MAX_BYTES = 2 * 2**30


@dataclass(frozen=True)
class Grid:
    """Uniform grid of cell centres over ``[low, high]`` per dimension."""

    low: np.ndarray
    high: np.ndarray
    resolution: tuple

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> np.ndarray:
        res = np.asarray(self.resolution, dtype=np.float64)
        return (self.high - self.low) / np.maximum(res - 1, 1)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.low, self.high, self.resolution)]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def locate(self, states) -> np.ndarray:
        """Index of the nearest cell centre (states outside the grid snap to the border).

        Rounds half away from the grid centre so the map commutes with the
        reflection ``s -> low + high - s``.
        """
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        res = np.asarray(self.resolution)
        u = (s - self.low) / self.spacing
        idx = np.floor(u + 0.5)
        tie = np.abs(u - np.floor(u) - 0.5) < 1e-9
        away = np.where(u > (res - 1) / 2.0, np.ceil(u), np.floor(u))
        idx = np.clip(np.where(tie, away, idx), 0, res - 1).astype(np.int64)
        return np.ravel_multi_index(tuple(idx.T), tuple(self.resolution))


def make_grid(low, high, resolution) -> Grid:
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    res = tuple(int(r) for r in np.broadcast_to(resolution, low.shape))
    if any(r < 1 for r in res) or np.any(high < low):
        raise ValueError("bad grid bounds or resolution")
    return Grid(low, high, res)


def memory_estimate(n_cells: int, n_actions: int) -> int:
    """Bytes of the dense transition tensor."""
    return 8 * n_cells * n_cells * n_actions


def discretize(env, grid: Grid, action_levels, n_mc_samples: int = 1, rng=None, discount: float = 0.99,
               hold_steps: int = 1, horizon: int | None = None, initial=None) -> FiniteMdp:
    """Tabular MDP whose cell-to-cell kernel is estimated by sampled one-step rollouts.

    With ``n_mc_samples == 1`` each (cell, action) is simulated once from the cell
    centre; otherwise start points are drawn uniformly inside the cell. Each
    tabular step applies the action for ``hold_steps`` environment steps.
    """
    if grid.n_cells > MAX_CELLS:
        raise ValueError(f"{grid.n_cells} cells exceed the limit of {MAX_CELLS} "
                         f"(dense kernel would need ~{memory_estimate(grid.n_cells, len(action_levels)) / 2**30:.1f} GiB)")
    levels = np.asarray(action_levels, dtype=np.float64)
    need = memory_estimate(grid.n_cells, levels.shape[0])
    if need > MAX_BYTES:
        raise MemoryError(f"dense kernel for {grid.n_cells} cells needs ~{need / 2**30:.1f} GiB "
                          f"(limit {MAX_BYTES / 2**30:.0f} GiB)")
    if n_mc_samples < 1:
        raise ValueError("n_mc_samples must be >= 1")
    if n_mc_samples > 1 and rng is None:
        raise ValueError("sampling within cells needs an rng")
    S, A = grid.n_cells, levels.shape[0]
    centers = grid.centers()
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for a in range(A):
        if n_mc_samples == 1:
            starts = centers
        else:
            jitter = rng.uniform(-0.5, 0.5, (n_mc_samples, S, centers.shape[1])) * grid.spacing
            starts = (centers[None] + jitter).reshape(-1, centers.shape[1])
        s = starts
        for _ in range(hold_steps):
            s, _, _ = env.step_batch(s, np.full(s.shape[0], levels[a]), rng)
        dest = grid.locate(s).reshape(n_mc_samples, S)
        for k in range(n_mc_samples):
            np.add.at(P[:, a, :], (np.arange(S), dest[k]), 1.0)
        R[:, a] = env.reward(centers)
    mass = P.sum(axis=2)
    empty = mass == 0
    if np.any(empty):
        log.warning("%d (cell, action) pairs had no sampled transition; using self-loops", int(empty.sum()))
        for s, a in np.argwhere(empty):
            P[s, a, s] = 1.0
            mass[s, a] = 1.0
    P /= mass[..., None]
    cost = env.cost(centers)
    if initial is None:
        d0 = (cost == 0).astype(np.float64)
        if d0.sum() == 0:
            d0[:] = 1.0
    else:
        d0 = np.asarray(initial, dtype=np.float64)
    d0 = d0 / d0.sum()
    T = horizon if horizon is not None else max(1, getattr(env, "horizon", 100) // hold_steps)
    return FiniteMdp(P, R, cost, discount, d0, T, name="discretized")
