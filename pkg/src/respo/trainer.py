"""Tabular RESPO actor-critic and its single-step update rules.

:func:`train` drives the jitted episode kernel in :mod:`respo.kernels`; the
``*_update`` functions below are the same rules for one transition, written
out plainly for inspection and testing.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from respo import kernels as K
from respo.mdp import FiniteMdp, SparseModel, stream
from respo.schedules import ScheduleSet, polynomial_set

log = logging.getLogger(__name__)

KINDS = {
    "unconstrained": K.UNCONSTRAINED,
    "respo": K.RESPO,
    "scalar_lagrangian": K.LAGRANGIAN,
    "lagrangian_chi_zero_ablation": K.LAGRANGIAN,
    "fac_zero_threshold": K.FAC,
    "rcrl": K.RCRL,
    "cbf": K.CBF,
    "respo_with_vh_ablation": K.RESPO_VH,
    "respo_multi": K.RESPO_MULTI,
    "lagrangian_multi": K.LAGRANGIAN_MULTI,
}
STATE_MULTIPLIER_KINDS = {K.FAC, K.RCRL}
OMEGA_LO = -30.0
STREAM_TRAIN, STREAM_EVAL = 1, 2
_LOG_MAX = math.log(np.finfo(np.float64).max)


class DivergenceError(RuntimeError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class LambdaMaxWarning(UserWarning):
    pass


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y))) if y > 0 else OMEGA_LO


def lambda_max_bound(r_max: float, gamma: float, horizon: int, h_delta: float, p_min: float) -> float:
    """Multiplier cap above which any cost reduction outweighs any reward gain.

    ``R_max / ((1 - gamma) * gamma^T * H_delta * P_min)``, evaluated in log space
    so long horizons do not underflow ``gamma^T``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if r_max <= 0 or h_delta <= 0 or p_min <= 0 or horizon < 0:
        raise ValueError("R_max, H_delta and P_min must be positive")
    if np.isinf(h_delta):
        return 0.0
    log_b = np.log(r_max) - np.log1p(-gamma) - horizon * np.log(gamma) - np.log(h_delta) - np.log(p_min)
    return math.inf if log_b > _LOG_MAX else math.exp(log_b)


@dataclass
class TrainerConfig:
    kind: str = "respo"
    iterations: int = 10_000
    schedules: ScheduleSet = field(default_factory=polynomial_set)
    lam_max: float = 100.0
    omega_init: float = -2.0
    p_init: float = 0.5
    theta_box: float = 20.0
    ref_discount: float | None = None
    chi: tuple = (0.0, 0.0, 0.0)
    cbf_nu: float = 0.2
    cbf_dt: float = 1.0
    baseline: bool = False
    normalize: bool = False
    chunk: int = 200
    eval_every: int = 100
    eval_episodes: int = 50
    p_min: float = 1.0
    freeze_ref: bool = False
    freeze_multiplier: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; choose from {sorted(KINDS)}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lam_max <= 0:
            raise ValueError("lam_max must be positive")
        if any(c < 0 for c in self.chi):
            raise ValueError("chi must be non-negative")
        if self.cbf_nu <= 0:
            raise ValueError("cbf nu must be positive")
        problems = self.schedules.violations()
        if problems:
            warnings.warn("schedule set breaks the timescale ordering: " + "; ".join(problems), stacklevel=2)

    @property
    def code(self) -> int:
        return KINDS[self.kind]


@dataclass
class LearnerState:
    theta: np.ndarray
    q: np.ndarray
    qc: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    k: int = 0
    lam_max: float = np.inf
    state_multiplier: bool = False

    @property
    def lam(self) -> np.ndarray:
        """Multipliers per cost channel (per state for state-dependent kinds)."""
        lam = np.minimum(softplus(self.omega), self.lam_max)
        return lam if self.state_multiplier else lam[:, 0]

    def policy(self) -> np.ndarray:
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.theta, axis=1)

    def greedy_policy(self) -> np.ndarray:
        pi = np.zeros_like(self.theta)
        pi[np.arange(pi.shape[0]), self.greedy_actions()] = 1.0
        return pi

    def copy(self) -> "LearnerState":
        return replace(self, theta=self.theta.copy(), q=self.q.copy(), qc=self.qc.copy(),
                       p=self.p.copy(), omega=self.omega.copy())


def init_state(model: SparseModel, config: TrainerConfig) -> LearnerState:
    S, A, C = model.n_states, model.n_actions, model.n_channels
    state_mult = config.code in STATE_MULTIPLIER_KINDS
    return LearnerState(
        theta=np.zeros((S, A)),
        q=np.zeros((S, A)),
        qc=np.zeros((C, S, A)),
        p=np.full((max(C, 1), S), float(config.p_init)),
        omega=np.full((C, S if state_mult else 1), float(config.omega_init)),
        lam_max=float(config.lam_max),
        state_multiplier=state_mult,
    )


# -- single-transition update rules ---------------------------------------------


def critic_update(q: float, target_next: float, signal: float, gamma: float, step: float) -> float:
    """TD(0) step of a tabular critic entry toward ``signal + gamma * target_next``."""
    target = signal + gamma * target_next
    if not np.isfinite(target):
        raise FloatingPointError(f"non-finite critic target {target}")
    return q - step * (q - target)


def policy_weight(q: float, qc: float, p: float, lam: float) -> float:
    """Score-function weight of the RESPO actor step (descent direction)."""
    return -q * (1.0 - p) + qc * (lam * (1.0 - p) + p)


def policy_update(theta_row: np.ndarray, action: int, q: float, qc: float, p: float, lam: float,
                  step: float, t: int, gamma: float, box: float = 20.0) -> np.ndarray:
    """``theta <- Proj(theta - step * gamma^t * weight * grad log pi(a|s))`` for one softmax row."""
    z = np.exp(theta_row - theta_row.max())
    pi = z / z.sum()
    grad = -pi
    grad[action] += 1.0
    out = theta_row - step * gamma ** t * policy_weight(q, qc, p, lam) * grad
    return np.clip(out, -box, box)


def ref_update(p: float, violating: bool, p_next: float, ref_discount: float, step: float) -> float:
    target = max(1.0 if violating else 0.0, ref_discount * p_next)
    return float(np.clip(p - step * (p - target), 0.0, 1.0))


def lagrange_update(omega: float, qc: float, p: float, step: float, lam_max: float) -> float:
    """Projected ascent on the multiplier parameter (lambda = softplus(omega))."""
    grad_lam = 1.0 / (1.0 + np.exp(-omega))
    out = omega + step * qc * (1.0 - p) * grad_lam
    return float(np.clip(out, OMEGA_LO, inv_softplus(lam_max)))


# -- training loop ---------------------------------------------------------------


@dataclass
class TrainResult:
    state: LearnerState
    episodes: np.ndarray  # [iterations, 3 + 2C]: return, discounted return, length, (violations, disc cost) per channel
    evals: list = field(default_factory=list)
    diverged_at: int | None = None
    wall_ms: float = 0.0

    @property
    def n_channels(self) -> int:
        return (self.episodes.shape[1] - 3) // 2

    def violations(self, c: int = 0) -> np.ndarray:
        return self.episodes[:, 3 + 2 * c]

    def discounted_cost(self, c: int = 0) -> np.ndarray:
        return self.episodes[:, 4 + 2 * c]


def as_model(env) -> SparseModel:
    if isinstance(env, SparseModel):
        return env
    if isinstance(env, FiniteMdp):
        return env.to_sparse()
    if hasattr(env, "to_sparse"):
        return env.to_sparse()
    raise TypeError(f"cannot train a tabular learner on {type(env).__name__}")


def check_lambda_max(env, config: TrainerConfig) -> float | None:
    """Warn when the configured cap is below the dominance bound; returns the bound."""
    if not isinstance(env, FiniteMdp) or env.h_delta <= 0 or env.r_max <= 0:
        return None
    bound = lambda_max_bound(env.r_max, env.discount, env.horizon, env.h_delta, config.p_min)
    if config.lam_max < bound:
        warnings.warn(f"lambda_max={config.lam_max:g} is below the dominance bound {bound:.4g}",
                      LambdaMaxWarning, stacklevel=3)
    return bound


def evaluate(model: SparseModel, state: LearnerState, seed: int, k: int, n: int,
             starts: np.ndarray | None = None) -> np.ndarray:
    """Greedy-policy episodes; returns ``[n, 3 + 2C]`` stats and the start states."""
    rng = stream(seed, STREAM_EVAL, k)
    if starts is None:
        starts = np.searchsorted(model.init_cdf, rng.random(n), side="right")
        starts = np.minimum(starts, model.n_states - 1)
    u = rng.random((len(starts), model.horizon))
    stats = K.greedy_rollouts(model.succ, model.cdf, model.reward, model.costs, model.absorbing,
                              model.discount, state.greedy_actions(), np.asarray(starts, dtype=np.int64),
                              model.horizon, u)
    return stats, np.asarray(starts)


def train(env, config: TrainerConfig, seed: int = 0, oracle=None, state: LearnerState | None = None,
          state_mask: np.ndarray | None = None, on_eval=None) -> TrainResult:
    """Run the tabular learner selected by ``config.kind`` for ``config.iterations`` episodes.

    ``oracle`` may carry ``phi_star_discounted`` and ``feasible_mask`` arrays; when
    given, evaluation records include the REF sup-error and the zero-violation
    rate from feasible starts. ``on_eval(record)`` is called at each evaluation.
    """
    check_lambda_max(env, config)
    model = as_model(env)
    st = state if state is not None else init_state(model, config)
    S, A, C = model.n_states, model.n_actions, model.n_channels
    code = config.code
    if code in (K.RESPO_MULTI, K.LAGRANGIAN_MULTI) and C < 3:
        raise ValueError("multi-constraint learners need three cost channels")
    critic_max = np.zeros(C, dtype=np.int64)
    if code in (K.RCRL, K.RESPO_VH):
        critic_max[0] = 1
    chi = np.zeros(C)
    chi[: min(C, len(config.chi))] = config.chi[:C]
    flags = np.array([1, 1, 0 if config.freeze_ref else 1, 0 if config.freeze_multiplier else 1], dtype=np.int64)
    ref_gamma = model.discount if config.ref_discount is None else float(config.ref_discount)
    omega_hi = inv_softplus(config.lam_max)
    mask = np.ones(S, dtype=bool) if state_mask is None else np.asarray(state_mask, dtype=bool)
    episodes = np.zeros((config.iterations, 3 + 2 * C))
    evals = []
    t0 = time.perf_counter()
    diverged = None
    every = config.eval_every
    for start in range(0, config.iterations, config.chunk):
        n = min(config.chunk, config.iterations - start)
        # random draws depend only on the chunk index, so the evaluation cadence
        # (which may split a chunk) never changes the training trajectory
        rng = stream(seed, STREAM_TRAIN, start // config.chunk)
        u_init = rng.random(n)
        u = rng.random((n, model.horizon + 1, 2))
        off = 0
        while off < n:
            k = start + off
            m = n - off
            if every:
                m = min(m, (k // every + 1) * every - k)
            zetas = config.schedules.table(np.arange(st.k, st.k + m))
            stats = np.zeros((m, 3 + 2 * C))
            bad = K.run_chunk(code, model.succ, model.cdf, model.reward, model.costs, model.absorbing,
                              model.init_cdf, model.discount, ref_gamma, model.horizon,
                              st.theta, st.q, st.qc, st.p, st.omega, critic_max, chi, zetas,
                              float(config.lam_max), OMEGA_LO, omega_hi, float(config.theta_box),
                              float(config.cbf_nu), float(config.cbf_dt), flags, st.state_multiplier,
                              bool(config.baseline), bool(config.normalize),
                              u_init[off: off + m], u[off: off + m], stats)
            episodes[k: k + m] = stats
            if bad >= 0:
                diverged = k + int(bad)
                episodes = episodes[: diverged + 1]
                st.k += int(bad) + 1
                break
            st.k += m
            off += m
            k += m
            if every and (k % every == 0 or k == config.iterations):
                rec = eval_record(model, st, seed, k, config, oracle, mask, episodes[max(0, k - every): k])
                evals.append(rec)
                if on_eval is not None:
                    on_eval(rec)
        if diverged is not None:
            break
    res = TrainResult(st, episodes, evals, diverged, (time.perf_counter() - t0) * 1e3)
    if diverged is not None:
        raise DivergenceError(f"parameters exceeded {K.DIVERGENCE:g} at iteration {diverged}", res)
    return res


def eval_record(model, st: LearnerState, seed: int, k: int, config: TrainerConfig, oracle, mask,
                recent: np.ndarray) -> dict:
    stats, starts = evaluate(model, st, seed, k, config.eval_episodes)
    lam = st.lam
    rec = {
        "iteration": k,
        "eval_reward_mean": float(stats[:, 1].mean()),
        "eval_reward_std": float(stats[:, 1].std()),
        "eval_violations_mean": float(stats[:, 3].mean()),
        "eval_violations_std": float(stats[:, 3].std()),
        "eval_discounted_cost_mean": float(stats[:, 4].mean()),
        "lambda": float(np.mean(lam)) if lam.ndim == 1 else float(np.mean(lam[0])),
        "ref_error": float("nan"),
        "feasible_zero_violation_rate": float("nan"),
        "train_reward_mean": float(recent[:, 1].mean()) if len(recent) else float("nan"),
        "train_violations_mean": float(recent[:, 3].mean()) if len(recent) else float("nan"),
    }
    if oracle is not None:
        phi = getattr(oracle, "phi_star_discounted", None)
        if phi is not None:
            rec["ref_error"] = float(np.max(np.abs(st.p[0][mask] - phi[mask])))
        feas = getattr(oracle, "feasible_mask", None)
        if feas is not None:
            sel = feas[starts]
            if sel.any():
                rec["feasible_zero_violation_rate"] = float(np.mean(stats[sel, 3] == 0))
    return rec


# -- hard/soft multi-constraint variant ---------------------------------------------


@dataclass
class MultiConstraintState:
    """Named view of a learner trained with ``kind="respo_multi"``.

    Channel 0 is the top-priority hard constraint, 1 the second hard constraint
    and 2 the soft constraint.
    """

    learner: LearnerState

    @property
    def ref_hard1(self) -> np.ndarray:
        return self.learner.p[0]

    @property
    def ref_hard2(self) -> np.ndarray:
        return self.learner.p[1]

    @property
    def lam_hard1(self) -> float:
        return float(self.learner.lam[0])

    @property
    def lam_hard2(self) -> float:
        return float(self.learner.lam[1])

    @property
    def lam_soft(self) -> float:
        return float(self.learner.lam[2])


def multi_policy_weight(q: float, qc: np.ndarray, p1: float, p2: float, lam: np.ndarray) -> float:
    """Nested actor weight: the first hard constraint gates everything else."""
    inner = -q + lam[2] * qc[2] + lam[1] * qc[1]
    block2 = inner * (1.0 - p2) + qc[1] * p2
    return (block2 + lam[0] * qc[0]) * (1.0 - p1) + qc[0] * p1


def train_multiconstraint(env, config: TrainerConfig, seed: int = 0, chi_soft: float | None = None, **kw):
    """Train the nested hard/soft learner; returns ``(TrainResult, MultiConstraintState)``."""
    chi = tuple(config.chi) + (0.0,) * max(0, 3 - len(config.chi))
    if chi_soft is not None:
        chi = (0.0, 0.0, float(chi_soft))
    res = train(env, replace(config, kind="respo_multi", chi=chi), seed, **kw)
    return res, MultiConstraintState(res.state)
