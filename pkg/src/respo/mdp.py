"""Finite MDP data model, trajectory sampling and return computations."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from respo._accel import njit

ROW_TOL = 1e-9


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for one (seed, key...) cell.

    Streams for distinct key tuples are independent, so episodes and seeds can be
    sampled in any order (or in parallel) without changing results.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def _as_cdf(p: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p, axis=-1)
    cdf[..., -1] = 1.0
    return cdf


@dataclass(frozen=True)
class SparseModel:
    """Successor-list form of a tabular MDP consumed by the jitted kernels.

    ``succ[s, a, k]`` is the k-th possible successor and ``cdf[s, a, k]`` the
    cumulative probability up to it (padding entries repeat the last successor
    with cdf 1). ``costs`` carries one row per cost channel.
    """

    succ: np.ndarray
    cdf: np.ndarray
    reward: np.ndarray
    costs: np.ndarray
    absorbing: np.ndarray
    init_cdf: np.ndarray
    discount: float
    horizon: int

    @property
    def n_states(self) -> int:
        return self.succ.shape[0]

    @property
    def n_actions(self) -> int:
        return self.succ.shape[1]

    @property
    def n_channels(self) -> int:
        return self.costs.shape[0]

    @property
    def cost(self) -> np.ndarray:
        return self.costs[0]


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Tabular MDP with a state-based, non-negative safety loss.

    ``absorbing`` marks states whose rows are self-loops with zero reward; episodes
    stop on entering them.
    """

    transition: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    discount: float
    initial_distribution: np.ndarray
    horizon: int
    absorbing: np.ndarray = None  # type: ignore[assignment]
    name: str = ""

    def __post_init__(self):
        P = np.ascontiguousarray(self.transition, dtype=np.float64)
        S, A, S2 = P.shape
        if S != S2:
            raise ValueError(f"transition must be [S, A, S], got {P.shape}")
        r = np.ascontiguousarray(self.reward, dtype=np.float64)
        h = np.ascontiguousarray(self.cost, dtype=np.float64)
        d0 = np.ascontiguousarray(self.initial_distribution, dtype=np.float64)
        ab = np.zeros(S, dtype=bool) if self.absorbing is None else np.asarray(self.absorbing, dtype=bool)
        if r.shape != (S, A):
            raise ValueError(f"reward must be [{S}, {A}], got {r.shape}")
        if h.shape != (S,) or d0.shape != (S,) or ab.shape != (S,):
            raise ValueError("cost, initial_distribution and absorbing must have one entry per state")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            bad = np.argwhere(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL)
            raise ValueError(f"transition rows must be distributions; offending (s, a): {bad[:5].tolist()}")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValueError("cost must be finite and non-negative")
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial_distribution must sum to 1")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        for s in np.flatnonzero(ab):
            if not np.all(P[s, :, s] == 1.0) or np.any(r[s] != 0.0):
                raise ValueError(f"absorbing state {s} needs self-loop rows and zero reward")
        for k, v in dict(transition=P, reward=r, cost=h, initial_distribution=d0, absorbing=ab).items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def violation(self) -> np.ndarray:
        """Instantaneous violation indicator, ``cost > 0`` per state."""
        return self.cost > 0

    @property
    def initial_support(self) -> np.ndarray:
        return self.initial_distribution > 0

    @property
    def h_max(self) -> float:
        return float(self.cost.max())

    @property
    def h_min(self) -> float:
        nz = self.cost[self.cost > 0]
        return float(nz.min()) if nz.size else 0.0

    @property
    def h_delta(self) -> float:
        """Smallest non-zero gap between two distinct cost values."""
        vals = np.unique(self.cost)
        return float(np.diff(vals).min()) if vals.size > 1 else 0.0

    @property
    def r_max(self) -> float:
        return float(np.abs(self.reward).max())

    def is_deterministic(self) -> bool:
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    def successors(self, s: int, a: int) -> np.ndarray:
        return np.flatnonzero(self.transition[s, a] > 0)

    @cached_property
    def successor_lists(self) -> tuple[np.ndarray, np.ndarray]:
        """``(succ, prob)`` arrays of shape ``[S, A, K]``; padding has probability 0."""
        P = self.transition
        S, A, _ = P.shape
        nz = P > 0
        K = int(nz.sum(axis=2).max())
        succ = np.zeros((S, A, K), dtype=np.int64)
        prob = np.zeros((S, A, K))
        for s in range(S):
            for a in range(A):
                idx = np.flatnonzero(nz[s, a])
                succ[s, a, : idx.size] = idx
                succ[s, a, idx.size:] = idx[-1]
                prob[s, a, : idx.size] = P[s, a, idx]
        return succ, prob

    def to_sparse(self) -> SparseModel:
        succ, prob = self.successor_lists
        cdf = _as_cdf(prob.copy())
        return SparseModel(
            succ=succ.copy(),
            cdf=cdf,
            reward=self.reward.copy(),
            costs=self.cost[None, :].copy(),
            absorbing=self.absorbing.copy(),
            init_cdf=_as_cdf(self.initial_distribution.copy()),
            discount=self.discount,
            horizon=self.horizon,
        )

    # -- text serialization -------------------------------------------------

    def dumps(self) -> str:
        """Structured text form; floats use shortest round-trip repr."""
        f = repr
        lines = [
            "# respo finite-mdp v1",
            f"n_states {self.n_states}",
            f"n_actions {self.n_actions}",
            f"discount {f(self.discount)}",
            f"horizon {self.horizon}",
            "[transition]",
        ]
        for s in range(self.n_states):
            for a in range(self.n_actions):
                lines.append(" ".join(f(float(x)) for x in self.transition[s, a]))
        lines.append("[reward]")
        for s in range(self.n_states):
            lines.append(" ".join(f(float(x)) for x in self.reward[s]))
        lines.append("[cost]")
        lines.append(" ".join(f(float(x)) for x in self.cost))
        lines.append("[initial_distribution]")
        lines.append(" ".join(f(float(x)) for x in self.initial_distribution))
        lines.append("[absorbing]")
        lines.append(" ".join(str(int(s)) for s in np.flatnonzero(self.absorbing)))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "FiniteMdp":
        header: dict[str, str] = {}
        sections: dict[str, list[str]] = {}
        current = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = []
            elif current is None:
                key, _, val = line.partition(" ")
                header[key] = val.strip()
            else:
                sections[current].append(line)
        try:
            S, A = int(header["n_states"]), int(header["n_actions"])
            P = np.array([[float(x) for x in row.split()] for row in sections["transition"]]).reshape(S, A, S)
            r = np.array([[float(x) for x in row.split()] for row in sections["reward"]]).reshape(S, A)
            h = np.array([float(x) for x in " ".join(sections["cost"]).split()])
            d0 = np.array([float(x) for x in " ".join(sections["initial_distribution"]).split()])
            ab = np.zeros(S, dtype=bool)
            for tok in " ".join(sections.get("absorbing", [])).split():
                ab[int(tok)] = True
            return cls(P, r, h, float(header["discount"]), d0, int(header["horizon"]), ab)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed finite-mdp text: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "FiniteMdp":
        return cls.loads(Path(path).read_text())


class ContinuousEnv(Protocol):
    """Continuous-state environment with non-negative cost output."""

    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int

    def reset(self, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, state: np.ndarray, action: np.ndarray, rng: np.random.Generator): ...


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    terminated: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def episode_cost_return(self) -> float:
        return float(np.sum(self.costs))

    @property
    def violation_count(self) -> int:
        return int(np.count_nonzero(np.asarray(self.costs) > 0))


def _discounted(values, gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {gamma}")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return 0.0
    # Horner from the tail keeps the sum exact for short geometric cases
    acc = 0.0
    for x in v[::-1]:
        acc = x + gamma * acc
    return float(acc)


def discounted_reward_return(trajectory: Trajectory, gamma: float) -> float:
    return _discounted(trajectory.rewards, gamma)


def discounted_cost_return(trajectory: Trajectory, gamma: float) -> float:
    return _discounted(trajectory.costs, gamma)


def sample_trajectory(env, policy, horizon: int, rng: np.random.Generator, start=None) -> Trajectory:
    """Roll out ``policy`` for at most ``horizon`` steps.

    ``env`` is a :class:`FiniteMdp` (``policy`` an ``[S, A]`` probability table or a
    callable ``(state, rng) -> action``) or a :class:`ContinuousEnv` (``policy`` a
    callable returning an action vector).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if isinstance(env, FiniteMdp):
        return _sample_finite(env, policy, horizon, rng, start)
    return _sample_continuous(env, policy, horizon, rng, start)


def _sample_finite(mdp: FiniteMdp, policy, horizon, rng, start) -> Trajectory:
    S, A = mdp.n_states, mdp.n_actions
    table = None
    if not callable(policy):
        table = np.asarray(policy, dtype=np.float64)
        if table.shape != (S, A) or np.any(table < 0) or np.any(np.abs(table.sum(1) - 1) > ROW_TOL):
            raise ValueError(f"policy table must be a [{S}, {A}] row-stochastic array")
    s = int(rng.choice(S, p=mdp.initial_distribution)) if start is None else int(start)
    out = ([], [], [], [], [])
    terminated = bool(mdp.absorbing[s])
    while not terminated and len(out[0]) < horizon:
        a = int(rng.choice(A, p=table[s])) if table is not None else policy(s, rng)
        if not (isinstance(a, (int, np.integer)) and 0 <= a < A):
            raise ValueError(f"policy returned invalid action {a!r} in state {s} (expected 0..{A - 1})")
        s2 = int(rng.choice(S, p=mdp.transition[s, a]))
        for lst, v in zip(out, (s, a, s2, mdp.reward[s, a], mdp.cost[s])):
            lst.append(v)
        s = s2
        terminated = bool(mdp.absorbing[s])
    return Trajectory(
        states=np.array(out[0], dtype=np.int64),
        actions=np.array(out[1], dtype=np.int64),
        next_states=np.array(out[2], dtype=np.int64),
        rewards=np.array(out[3], dtype=np.float64),
        costs=np.array(out[4], dtype=np.float64),
        terminated=terminated,
    )


def _sample_continuous(env, policy: Callable, horizon, rng, start) -> Trajectory:
    s = env.reset(rng) if start is None else np.asarray(start, dtype=np.float64)
    states, actions, nexts, rewards, costs = [], [], [], [], []
    done = False
    lo, hi = np.asarray(env.action_low), np.asarray(env.action_high)
    while not done and len(rewards) < horizon:
        a = np.asarray(policy(s, rng), dtype=np.float64)
        if a.shape != lo.shape or not np.all(np.isfinite(a)) or np.any(a < lo - 1e-12) or np.any(a > hi + 1e-12):
            raise ValueError(f"policy returned out-of-bounds action {a!r}; bounds [{lo}, {hi}]")
        s2, r, c, done = env.step(s, a, rng)
        states.append(s)
        actions.append(a)
        nexts.append(s2)
        rewards.append(r)
        costs.append(c)
        s = s2
    return Trajectory(
        states=np.array(states),
        actions=np.array(actions),
        next_states=np.array(nexts),
        rewards=np.array(rewards, dtype=np.float64),
        costs=np.array(costs, dtype=np.float64),
        terminated=bool(done),
    )


# -- batched Monte-Carlo rollouts --------------------------------------------


@njit
def _draw(cdf_row, u):
    k = 0
    n = cdf_row.shape[0]
    while k < n - 1 and u >= cdf_row[k]:
        k += 1
    return k


@njit
def rollout_batch(succ, cdf, pol_cdf, absorbing, reward, cost, gamma, starts, horizon, u):
    """Roll out one trajectory per entry of ``starts``.

    ``u`` holds ``[n, horizon, 2]`` uniforms (action draw, successor draw).
    Returns (hit_violation, discounted_reward, discounted_cost, violation_steps, length).
    The violation flag also counts the state the trajectory ends in.
    """
    n = starts.shape[0]
    hit = np.zeros(n, dtype=np.bool_)
    dr = np.zeros(n)
    dc = np.zeros(n)
    nv = np.zeros(n, dtype=np.int64)
    ln = np.zeros(n, dtype=np.int64)
    for i in range(n):
        s = starts[i]
        disc = 1.0
        t = 0
        if cost[s] > 0:
            hit[i] = True
        while t < horizon and not absorbing[s]:
            a = _draw(pol_cdf[s], u[i, t, 0])
            s2 = succ[s, a, _draw(cdf[s, a], u[i, t, 1])]
            dr[i] += disc * reward[s, a]
            dc[i] += disc * cost[s]
            if cost[s] > 0:
                nv[i] += 1
            disc *= gamma
            s = s2
            if cost[s] > 0:
                hit[i] = True
            t += 1
        ln[i] = t
    return hit, dr, dc, nv, ln


def monte_carlo(mdp: FiniteMdp, policy: np.ndarray, starts: Sequence[int], horizon: int,
                rng: np.random.Generator, chunk: int = 4096):
    """Batched rollouts from explicit start states; see :func:`rollout_batch`."""
    sp = mdp.to_sparse()
    pol_cdf = _as_cdf(np.asarray(policy, dtype=np.float64).copy())
    starts = np.asarray(starts, dtype=np.int64)
    outs = []
    for lo in range(0, starts.size, chunk):
        st = starts[lo: lo + chunk]
        u = rng.random((st.size, horizon, 2))
        outs.append(rollout_batch(sp.succ, sp.cdf, pol_cdf, sp.absorbing, sp.reward, sp.cost,
                                  mdp.discount, st, horizon, u))
    return tuple(np.concatenate(parts) for parts in zip(*outs))


def kahan_sum(values) -> float:
    """Compensated summation, used as an independent check on return sums."""
    total = 0.0
    comp = 0.0
    for x in values:
        y = float(x) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def deterministic_policy(actions, n_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    pi = np.zeros((actions.size, n_actions))
    pi[np.arange(actions.size), actions] = 1.0
    return pi


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int = 2, max_successors: int = 3,
               violation_rate: float = 0.25, n_absorbing: int = 1, discount: float = 0.99,
               horizon: int = 200, deterministic: bool = False) -> FiniteMdp:
    """Sparse random MDP for property checks.

    Each state-action pair moves to at most ``max_successors`` states. The first
    ``n_absorbing`` states are safe absorbing sinks, so reach probabilities are
    not trivially 0 or 1. At least one other state is violating.
    """
    S, A = int(n_states), int(n_actions)
    if S < n_absorbing + 2:
        raise ValueError("need room for the absorbing states plus two others")
    P = np.zeros((S, A, S))
    k_max = 1 if deterministic else max_successors
    for s in range(S):
        for a in range(A):
            k = int(rng.integers(1, k_max + 1))
            succ = rng.choice(S, size=k, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(k))
    cost = np.where(rng.random(S) < violation_rate, rng.uniform(0.2, 1.0, S), 0.0)
    cost[int(rng.integers(n_absorbing, S))] = float(rng.uniform(0.2, 1.0))
    reward = rng.uniform(-1.0, 1.0, (S, A))
    absorbing = np.zeros(S, dtype=bool)
    absorbing[:n_absorbing] = True
    for s in range(n_absorbing):
        P[s] = 0.0
        P[s, :, s] = 1.0
        reward[s] = 0.0
        cost[s] = 0.0
    d0 = np.zeros(S)
    d0[n_absorbing:] = 1.0 / (S - n_absorbing)
    return FiniteMdp(P, reward, cost, discount, d0, horizon, absorbing)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int, sparsity: float = 0.3) -> np.ndarray:
    """Stochastic policy with some actions switched off (each row keeps at least one)."""
    pi = rng.random((n_states, n_actions))
    pi[rng.random((n_states, n_actions)) < sparsity] = 0.0
    empty = pi.sum(axis=1) == 0
    pi[empty, rng.integers(0, n_actions, int(empty.sum()))] = 1.0
    return pi / pi.sum(axis=1, keepdims=True)


__all__ = [
    "FiniteMdp", "SparseModel", "Trajectory", "ContinuousEnv", "sample_trajectory",
    "discounted_reward_return", "discounted_cost_return", "monte_carlo", "stream",
    "kahan_sum", "uniform_policy", "deterministic_policy", "rollout_batch", "random_mdp", "random_policy",
]

