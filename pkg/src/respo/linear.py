"""Linear actor-critic over tile-coded features for continuous-state envs.

The update rules are the tabular ones with every table entry replaced by a
sum of weights over the active tiles. Actions come from a fixed list of
levels, so the actor is a softmax over linear logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from respo.mdp import stream
from respo.trainer import OMEGA_LO, STREAM_TRAIN, TrainerConfig, inv_softplus, softplus

LINEAR_KINDS = ("respo", "scalar_lagrangian", "unconstrained")


class TileCoder:
    """``n_tilings`` uniform grids over ``[low, high]``, each shifted by a fraction of a tile.

    ``resolution`` is the number of tiles per dimension of one tiling; every
    tiling carries one extra tile per dimension to absorb its offset.
    """

    def __init__(self, low, high, resolution, n_tilings: int = 2):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        if self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise ValueError("need low < high in every dimension")
        if n_tilings < 1:
            raise ValueError("need at least one tiling")
        res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), self.low.shape)
        if np.any(res < 1):
            raise ValueError("resolution must be >= 1")
        self.n_tilings = int(n_tilings)
        self.width = (self.high - self.low) / res
        self.dims = res + 1
        self.per_tiling = int(np.prod(self.dims))
        self.n_features = self.n_tilings * self.per_tiling

    def active(self, state) -> np.ndarray:
        """Index of the one active tile in each tiling."""
        s = np.clip(np.asarray(state, dtype=np.float64), self.low, self.high)
        out = np.empty(self.n_tilings, dtype=np.int64)
        for t in range(self.n_tilings):
            off = self.width * t / self.n_tilings
            cell = np.floor((s - self.low + off) / self.width).astype(np.int64)
            cell = np.minimum(cell, self.dims - 1)
            out[t] = t * self.per_tiling + np.ravel_multi_index(tuple(cell), tuple(self.dims))
        return out

    def features(self, state) -> np.ndarray:
        x = np.zeros(self.n_features)
        x[self.active(state)] = 1.0
        return x


@dataclass
class LinearLearner:
    coder: TileCoder
    levels: np.ndarray
    theta: np.ndarray  # [F, A] actor logits
    q: np.ndarray  # [F, A] reward critic
    qc: np.ndarray  # [F, A] cost critic
    p: np.ndarray  # [F] REF weights
    omega: float = -2.0
    k: int = 0

    @classmethod
    def create(cls, coder: TileCoder, levels, p_init: float = 0.5, omega_init: float = -2.0):
        levels = np.asarray(levels, dtype=np.float64)
        F, A = coder.n_features, len(levels)
        return cls(coder, levels, np.zeros((F, A)), np.zeros((F, A)), np.zeros((F, A)),
                   np.full(F, p_init / coder.n_tilings), omega_init)

    @property
    def lam(self) -> float:
        return float(softplus(self.omega))

    def logits(self, idx) -> np.ndarray:
        return self.theta[idx].sum(axis=0)

    def policy(self, state) -> np.ndarray:
        z = self.logits(self.coder.active(state))
        z = np.exp(z - z.max())
        return z / z.sum()

    def ref(self, state) -> float:
        return float(np.clip(self.p[self.coder.active(state)].sum(), 0.0, 1.0))

    def greedy_action(self, state) -> float:
        return float(self.levels[int(np.argmax(self.logits(self.coder.active(state))))])


@dataclass
class LinearResult:
    learner: LinearLearner
    episodes: np.ndarray  # [iterations, 5]: return, discounted return, length, violations, discounted cost
    evals: list = field(default_factory=list)


def _weight(kind, q, qc, p, lam):
    if kind == "respo":
        return -q * (1.0 - p) + qc * (lam * (1.0 - p) + p)
    if kind == "scalar_lagrangian":
        return -q + lam * qc
    return -q


def train_linear(env, coder: TileCoder, levels, config: TrainerConfig, seed: int = 0,
                 learner: LinearLearner | None = None) -> LinearResult:
    """Episodic training on a continuous env with ``reset(rng)`` and ``step(s, a, rng)``.

    ``config.kind`` must be one of ``LINEAR_KINDS``; step sizes are divided by the
    number of tilings so one update moves a value by the tabular amount.
    """
    if config.kind not in LINEAR_KINDS:
        raise ValueError(f"linear path supports {', '.join(LINEAR_KINDS)}, not {config.kind!r}")
    lr = learner or LinearLearner.create(coder, levels, config.p_init, config.omega_init)
    kind = config.kind
    gamma = float(getattr(env, "discount", 0.99))
    ref_gamma = gamma if config.ref_discount is None else float(config.ref_discount)
    chi = float(config.chi[0]) if config.chi else 0.0
    omega_hi = inv_softplus(config.lam_max)
    horizon = int(env.horizon)
    n_t = coder.n_tilings
    A = len(lr.levels)
    episodes = np.zeros((config.iterations, 5))
    for e in range(config.iterations):
        rng = stream(seed, STREAM_TRAIN, lr.k)
        z1, z2, z3, z4 = config.schedules.table(np.array([lr.k]))[0]
        z1, z2, z3 = z1 / n_t, z2 / n_t, z3 / n_t
        # rollout with the frozen policy
        s = env.reset(rng)
        idx = [coder.active(s)]
        costs = [float(np.max(env.cost(s))) if hasattr(env, "cost") else 0.0]
        acts, rewards, done = [], [], False
        for _ in range(horizon):
            a = int(rng.choice(A, p=lr.policy(s)))
            s, r, c, done = env.step(s, lr.levels[a], rng)
            acts.append(a)
            rewards.append(float(r))
            idx.append(coder.active(s))
            costs.append(float(np.max(c)))
            if done:
                break
        T = len(acts)
        last = int(rng.choice(A, p=lr.policy(s)))
        disc = gamma ** np.arange(T)
        h = np.asarray(costs[:T])
        episodes[e] = (sum(rewards), float(disc @ rewards), T, float(np.sum(h > 0)), float(disc @ h))
        # per-step updates: critic, actor, REF, multiplier
        gt = 1.0
        for t in range(T):
            i, i2, a = idx[t], idx[t + 1], acts[t]
            a2 = acts[t + 1] if t + 1 < T else last
            end = done and t == T - 1
            qv = lr.q[i, a].sum()
            tgt = rewards[t] if end else rewards[t] + gamma * lr.q[i2, a2].sum()
            lr.q[i, a] += z1 * (tgt - qv)
            qcv = lr.qc[i, a].sum()
            nxt = costs[t + 1] / (1.0 - gamma) if end else lr.qc[i2, a2].sum()
            lr.qc[i, a] += z1 * (costs[t] + gamma * nxt - qcv)
            q_all, qc_all = lr.q[i].sum(axis=0), lr.qc[i].sum(axis=0)
            p0 = float(np.clip(lr.p[i].sum(), 0.0, 1.0))
            lam = lr.lam
            z = lr.logits(i)
            pi = np.exp(z - z.max())
            pi /= pi.sum()
            w = _weight(kind, q_all[a], qc_all[a], p0, lam)
            if config.baseline:
                w -= pi @ _weight(kind, q_all, qc_all, p0, lam)
            grad = -pi
            grad[a] += 1.0
            lr.theta[i] = np.clip(lr.theta[i] - z2 * gt * w * grad, -config.theta_box, config.theta_box)
            ind = 1.0 if costs[t] > 0 else 0.0
            nxt_p = (1.0 if costs[t + 1] > 0 else 0.0) if end else float(np.clip(lr.p[i2].sum(), 0.0, 1.0))
            lr.p[i] += z3 * (max(ind, ref_gamma * nxt_p) - p0)
            if kind != "unconstrained":
                signal = qc_all[a] * (1.0 - p0) if kind == "respo" else qc_all[a] - chi
                sig = 1.0 / (1.0 + np.exp(-lr.omega))
                lr.omega = float(np.clip(lr.omega + z4 * signal * sig, OMEGA_LO, omega_hi))
            gt *= gamma
        lr.k += 1
    return LinearResult(lr, episodes)
