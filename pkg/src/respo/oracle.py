"""Exact dynamic-programming ground truth on :class:`FiniteMdp`.

Everything here is a pure function of its inputs. Learned quantities in the rest
of the package are checked against these values.
"""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from respo.mdp import FiniteMdp

log = logging.getLogger(__name__)

TOL_FEAS = 1e-6
TIE_TOL = 1e-9
DIRECT_SOLVE_MAX = 2000


class OracleError(RuntimeError):
    pass


def _check_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy must be [{mdp.n_states}, {mdp.n_actions}], got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability distributions")
    return pi


def policy_transition(mdp: FiniteMdp, policy) -> np.ndarray:
    pi = _check_policy(mdp, policy)
    return np.einsum("sa,sat->st", pi, mdp.transition)


def _expect(values: np.ndarray, succ: np.ndarray, prob: np.ndarray) -> np.ndarray:
    """``Q[s, a] = sum_k prob[s, a, k] * values[succ[s, a, k]]``."""
    return np.einsum("sak,sak->sa", prob, values[succ])


def policy_eval(mdp: FiniteMdp, policy, signal: str = "reward", tol: float = 1e-10,
                max_iter: int = 1_000_000, direct_max: int = DIRECT_SOLVE_MAX) -> np.ndarray:
    """Discounted value of ``policy`` for the reward or cost signal.

    Direct linear solve up to ``direct_max`` states; sup-norm iteration beyond that.
    """
    pi = _check_policy(mdp, policy)
    if signal == "reward":
        r = np.einsum("sa,sa->s", pi, mdp.reward)
    elif signal == "cost":
        r = mdp.cost.astype(np.float64).copy()
    else:
        raise ValueError(f"signal must be 'reward' or 'cost', got {signal!r}")
    g = mdp.discount
    S = mdp.n_states
    if S <= direct_max:
        P = policy_transition(mdp, pi)
        return np.linalg.solve(np.eye(S) - g * P, r)
    succ, prob = mdp.successor_lists
    v = np.zeros(S)
    for _ in range(max_iter):
        nv = r + g * np.einsum("sa,sa->s", pi, _expect(v, succ, prob))
        if np.max(np.abs(nv - v)) <= tol:
            return nv
        v = nv
    raise OracleError(f"policy evaluation did not converge; residual {np.max(np.abs(nv - v)):.3e}")


def q_from_v(mdp: FiniteMdp, v: np.ndarray, signal: str = "reward") -> np.ndarray:
    succ, prob = mdp.successor_lists
    base = mdp.reward if signal == "reward" else np.repeat(mdp.cost[:, None], mdp.n_actions, axis=1)
    return base + mdp.discount * _expect(v, succ, prob)


# -- reachability estimation -------------------------------------------------


def ref_bellman(mdp: FiniteMdp, policy, p: np.ndarray, ref_discount: float) -> np.ndarray:
    """One application of ``B[p](s) = max(1[h(s) > 0], gamma_p * E[p(s')])``."""
    P = policy_transition(mdp, policy)
    return np.maximum(mdp.violation.astype(np.float64), ref_discount * (P @ p))


def ref_iterates(mdp: FiniteMdp, policy, ref_discount: float, start=None):
    """Yield successive REF Bellman iterates starting from ``start`` (default: indicator)."""
    P = policy_transition(mdp, policy)
    ind = mdp.violation.astype(np.float64)
    p = ind.copy() if start is None else np.asarray(start, dtype=np.float64)
    while True:
        yield p
        p = np.maximum(ind, ref_discount * (P @ p))


def _can_reach(adj: sp.csr_matrix, targets: np.ndarray) -> np.ndarray:
    """States with a positive-probability path into ``targets`` (backward BFS)."""
    radj = adj.T.tocsr()
    seen = targets.copy()
    queue = deque(np.flatnonzero(targets).tolist())
    while queue:
        t = queue.popleft()
        for s in radj.indices[radj.indptr[t]: radj.indptr[t + 1]]:
            if not seen[s]:
                seen[s] = True
                queue.append(s)
    return seen


def ref_fixed_point(mdp: FiniteMdp, policy, ref_discount: float = 1.0, tol: float = 1e-10,
                    max_iter: int = 10_000_000) -> np.ndarray:
    """REF of ``policy``: fixed point of :func:`ref_bellman`.

    For ``ref_discount < 1`` the operator is a contraction and is iterated from
    zeros. For ``ref_discount == 1`` the least fixed point (the exact probability
    of ever visiting a violating state) is computed: states that cannot reach a
    violation get 0, the rest solve the absorbing-chain linear system.
    """
    if not 0.0 < ref_discount <= 1.0:
        raise ValueError("ref_discount must lie in (0, 1]")
    ind = mdp.violation.astype(np.float64)
    if ref_discount < 1.0:
        P = policy_transition(mdp, policy)
        p = np.zeros(mdp.n_states)
        for _ in range(max_iter):
            q = np.maximum(ind, ref_discount * (P @ p))
            if np.max(np.abs(q - p)) <= tol:
                return q
            p = q
        raise OracleError("REF iteration did not converge")
    P = sp.csr_matrix(policy_transition(mdp, policy))
    viol = mdp.violation
    reach = _can_reach(P, viol)
    p = ind.copy()
    free = reach & ~viol
    if free.any():
        idx = np.flatnonzero(free)
        A = sp.identity(idx.size, format="csc") - P[idx][:, idx].tocsc()
        b = np.asarray(P[idx][:, np.flatnonzero(viol)].sum(axis=1)).ravel()
        p[idx] = np.clip(spla.spsolve(A, b), 0.0, 1.0)
    return p


# -- safest policy and optimal REF -------------------------------------------


@dataclass
class SafestPolicy:
    policy: np.ndarray
    v_c: np.ndarray
    q_c: np.ndarray
    optimal_actions: np.ndarray  # bool [S, A], cost-optimal within TIE_TOL


def _value_iteration(backup, S: int, tol: float, max_iter: int, start=None) -> np.ndarray:
    v = np.zeros(S) if start is None else start.copy()
    for _ in range(max_iter):
        nv = backup(v)
        if np.max(np.abs(nv - v)) <= tol:
            return nv
        v = nv
    raise OracleError(f"value iteration did not converge; residual {np.max(np.abs(nv - v)):.3e}")


def min_reach_probability(mdp: FiniteMdp, allowed: np.ndarray, ref_discount: float = 1.0,
                          tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Smallest REF achievable using only ``allowed[s, a]`` actions (iterated from the indicator)."""
    succ, prob = mdp.successor_lists
    ind = mdp.violation.astype(np.float64)
    big = np.where(allowed, 0.0, np.inf)

    def backup(p):
        return np.maximum(ind, ref_discount * np.min(_expect(p, succ, prob) + big, axis=1))

    return _value_iteration(backup, mdp.n_states, tol, max_iter, start=ind)


def safest_policy(mdp: FiniteMdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> SafestPolicy:
    """Deterministic policy minimizing the discounted cost return from every state.

    Ties (within 1e-9 of the optimal cost backup) are broken by the smallest
    expected successor reach probability among cost-optimal actions, then by
    action index.
    """
    succ, prob = mdp.successor_lists
    g, h = mdp.discount, mdp.cost

    def backup(v):
        return h + g * np.min(_expect(v, succ, prob), axis=1)

    v = _value_iteration(backup, mdp.n_states, tol, max_iter)
    q = h[:, None] + g * _expect(v, succ, prob)
    optimal = q <= q.min(axis=1, keepdims=True) + TIE_TOL
    phi = min_reach_probability(mdp, optimal, 1.0)
    score = np.where(optimal, _expect(phi, succ, prob), np.inf)
    best = score <= score.min(axis=1, keepdims=True) + TIE_TOL
    actions = np.argmax(best, axis=1)
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), actions] = 1.0
    return SafestPolicy(policy=pi, v_c=v, q_c=q, optimal_actions=optimal)


def optimal_ref(mdp: FiniteMdp, ref_discount: float = 1.0, safest: SafestPolicy | None = None):
    """``(phi_star, feasible_mask)`` under the tie-broken safest policy."""
    safest = safest or safest_policy(mdp)
    phi = ref_fixed_point(mdp, safest.policy, ref_discount)
    return phi, phi <= TOL_FEAS


# -- reachability value (deterministic only) ---------------------------------


class UnsupportedStochasticError(ValueError):
    """The max-Bellman reachability value is only defined for deterministic rollouts."""


def _successor_map(mdp: FiniteMdp, policy) -> np.ndarray:
    pi = _check_policy(mdp, policy)
    if not np.all((pi == 0.0) | (pi == 1.0)):
        raise UnsupportedStochasticError("reachability value needs a deterministic policy")
    if not mdp.is_deterministic():
        raise UnsupportedStochasticError("reachability value needs deterministic transitions")
    a = np.argmax(pi, axis=1)
    return np.argmax(mdp.transition[np.arange(mdp.n_states), a], axis=1)


def reachability_value(mdp: FiniteMdp, policy, gamma_h: float = 1.0) -> np.ndarray:
    """Fixed point of ``V_h(s) = max(h(s), gamma_h * V_h(s'))`` along the unique rollout."""
    nxt = _successor_map(mdp, policy)
    v = mdp.cost.astype(np.float64).copy()
    for _ in range(mdp.n_states + 1):
        nv = np.maximum(mdp.cost, gamma_h * v[nxt])
        if np.array_equal(nv, v):
            return v
        v = nv
    if gamma_h < 1.0:
        return _value_iteration(lambda x: np.maximum(mdp.cost, gamma_h * x[nxt]), mdp.n_states, 1e-12, 10**6, v)
    return v


def trajectory_reachability_values(costs, gamma_h: float = 1.0) -> np.ndarray:
    """``V_h`` at every step of a finite trajectory (the tail after the end counts as 0)."""
    costs = np.asarray(costs, dtype=np.float64)
    out = np.zeros_like(costs)
    acc = 0.0
    for t in range(costs.size - 1, -1, -1):
        acc = max(costs[t], gamma_h * acc)
        out[t] = acc
    return out


# -- constrained-optimal reward reference ------------------------------------


@dataclass
class ConstrainedReference:
    value: np.ndarray  # NaN outside the zero-cost region
    policy: np.ndarray
    feasible: np.ndarray
    admissible: np.ndarray

    @property
    def empty(self) -> bool:
        return not bool(self.feasible.any())


def constrained_optimal_reference(mdp: FiniteMdp, safest: SafestPolicy | None = None,
                                  tol: float = 1e-10) -> ConstrainedReference:
    """Best reward among policies that never incur cost from the zero-``V_c*`` region.

    Each zero-cost state keeps only actions whose successors all stay in that
    region; reward value iteration then runs on the restricted MDP.
    """
    safest = safest or safest_policy(mdp)
    succ, prob = mdp.successor_lists
    S, A = mdp.n_states, mdp.n_actions
    feasible = safest.v_c <= 0.0
    stays = np.all((prob == 0.0) | feasible[succ], axis=2)
    admissible = stays & feasible[:, None]
    if not feasible.any():
        log.warning("constrained reference requested on an MDP with empty feasible set")
        return ConstrainedReference(np.full(S, np.nan), np.full((S, A), np.nan), feasible, admissible)
    if not admissible[feasible].any(axis=1).all():
        raise AssertionError("feasible state without an admissible action")
    big = np.where(admissible, 0.0, -np.inf)
    g = mdp.discount

    def backup(v):
        q = mdp.reward + g * _expect(v, succ, prob) + big
        return np.where(feasible, np.max(q, axis=1), 0.0)

    v = _value_iteration(backup, S, tol, 10**7)
    q = mdp.reward + g * _expect(v, succ, prob) + big
    pi = np.zeros((S, A))
    act = np.argmax(q, axis=1)
    pi[np.arange(S), act] = 1.0
    pi[~feasible] = safest.policy[~feasible]
    value = np.where(feasible, v, np.nan)
    return ConstrainedReference(value, pi, feasible, admissible)


def unconstrained_optimal(mdp: FiniteMdp, tol: float = 1e-10):
    """``(V*, greedy policy)`` for reward alone."""
    succ, prob = mdp.successor_lists
    g = mdp.discount

    def backup(v):
        return np.max(mdp.reward + g * _expect(v, succ, prob), axis=1)

    v = _value_iteration(backup, mdp.n_states, tol, 10**7)
    q = mdp.reward + g * _expect(v, succ, prob)
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), np.argmax(q, axis=1)] = 1.0
    return v, pi


# -- graph utilities ----------------------------------------------------------


def reachable_under(mdp: FiniteMdp, policy, start: int) -> np.ndarray:
    """States reachable from ``start`` with positive probability under ``policy``."""
    pi = _check_policy(mdp, policy)
    seen = np.zeros(mdp.n_states, dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        s = queue.popleft()
        if mdp.absorbing[s]:
            continue
        nxt = np.flatnonzero((pi[s][:, None] * mdp.transition[s]).sum(axis=0) > 0)
        for t in nxt:
            if not seen[t]:
                seen[t] = True
                queue.append(t)
    return seen


# -- re-entry certificate -----------------------------------------------------


@dataclass
class ReentryReport:
    applicable: bool
    m: int | None
    w: float
    lhs: float
    rhs: float
    satisfied: bool
    note: str = ""


def _det_next(mdp: FiniteMdp) -> np.ndarray:
    if not mdp.is_deterministic():
        raise UnsupportedStochasticError("re-entry certificate needs a deterministic MDP")
    return mdp.successor_lists[0][:, :, 0]


def _non_entering_cost(mdp: FiniteMdp, nxt: np.ndarray, feasible: np.ndarray, g: float):
    """Min discounted cost over trajectories that never enter the feasible set (inf if none)."""
    allowed = ~feasible[nxt] & ~feasible[:, None]
    cost = mdp.cost
    v = np.where(feasible, np.inf, 0.0)
    for _ in range(10**6):
        q = np.where(allowed, g * v[nxt], np.inf)
        nv = np.where(feasible, np.inf, cost + np.min(q, axis=1))
        fin = np.isfinite(nv) & np.isfinite(v)
        done = np.array_equal(np.isinf(nv), np.isinf(v)) and (
            not fin.any() or np.max(np.abs(nv[fin] - v[fin])) <= 1e-12)
        v = nv
        if done:
            break
    q = np.where(allowed, g * v[nxt], np.inf)
    return v, np.argmin(q, axis=1)


def reentry_certificate(mdp: FiniteMdp, state: int, gamma: float | None = None,
                        feasible: np.ndarray | None = None) -> ReentryReport:
    """Check the sufficient condition under which cost-optimal control re-enters the feasible set.

    ``m - 1`` is the fewest steps needed to reach the feasible set; ``w`` the
    largest violation gap along the cheapest trajectory that never enters it.
    Satisfied when ``H_max (1 - g^(m-1)) / (1 - g) < H_min g^w / (1 - g^w)``.
    """
    return reentry_certificates(mdp, [state], gamma, feasible)[0]


def reentry_certificates(mdp: FiniteMdp, states, gamma: float | None = None,
                         feasible: np.ndarray | None = None) -> list[ReentryReport]:
    """:func:`reentry_certificate` for many start states, sharing the per-MDP work."""
    g = mdp.discount if gamma is None else float(gamma)
    nxt = _det_next(mdp)
    if feasible is None:
        feasible = safest_policy(mdp).v_c <= 0.0
    feasible = np.asarray(feasible, dtype=bool)
    cache = []
    return [_certificate(mdp, int(s), g, nxt, feasible, cache) for s in states]


def _certificate(mdp, state, g, nxt, feasible, cache) -> ReentryReport:
    S = mdp.n_states
    if feasible[state]:
        return ReentryReport(True, 1, float("inf"), 0.0, float("inf"), True, "already feasible")
    dist = np.full(S, -1)
    dist[state] = 0
    queue = deque([state])
    found = None
    while queue and found is None:
        s = queue.popleft()
        for t in np.unique(nxt[s]):
            if dist[t] < 0:
                dist[t] = dist[s] + 1
                if feasible[t]:
                    found = t
                    break
                queue.append(t)
    if found is None:
        return ReentryReport(False, None, float("nan"), float("nan"), float("nan"), False,
                             "no path to the feasible set")
    m = int(dist[found]) + 1
    h_max, h_min = mdp.h_max, mdp.h_min
    lhs = h_max * (1.0 - g ** (m - 1)) / (1.0 - g)
    if not cache:
        cache.extend(_non_entering_cost(mdp, nxt, feasible, g))
    v, act = cache
    if not np.isfinite(v[state]):
        return ReentryReport(True, m, float("inf"), lhs, float("inf"), True,
                             "every trajectory re-enters the feasible set")
    cost = mdp.cost
    seen: dict[int, int] = {}
    path = []
    s = state
    while s not in seen:
        seen[s] = len(path)
        path.append(s)
        s = int(nxt[s, act[s]])
    cycle_start = seen[s]
    viol_times = [t for t, x in enumerate(path) if cost[x] > 0 and t >= 1]
    cyc = [t for t in range(cycle_start, len(path)) if cost[path[t]] > 0]
    if not cyc:
        raise OracleError("non-entering cycle without violations contradicts the feasible set")
    period = len(path) - cycle_start
    # unroll one extra period so the wrap-around gap is counted
    times = sorted(set(viol_times + [t + period for t in cyc]))
    gaps = [times[0]] + [b - a for a, b in zip(times, times[1:])]
    w = int(max(gaps))
    rhs = h_min * g ** w / (1.0 - g ** w)
    return ReentryReport(True, m, float(w), lhs, rhs, bool(lhs < rhs))


# -- bundled solution ---------------------------------------------------------


@dataclass
class OracleSolution:
    V: np.ndarray
    V_c: np.ndarray
    V_h: np.ndarray | None
    phi: np.ndarray
    phi_star: np.ndarray
    phi_star_discounted: np.ndarray
    safest_policy: np.ndarray
    v_c_star: np.ndarray
    feasible_mask: np.ndarray
    constrained_optimal_V: np.ndarray
    ref_discount: float = 0.99

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "V", "V_c", "phi_star", "phi_star_discounted", "feasible"])
            for s in range(self.V.size):
                w.writerow([s, repr(float(self.V[s])), repr(float(self.V_c[s])),
                            repr(float(self.phi_star[s])), repr(float(self.phi_star_discounted[s])),
                            int(self.feasible_mask[s])])


def solve(mdp: FiniteMdp, policy=None, ref_discount: float = 0.99) -> OracleSolution:
    """Full oracle bundle; values are for ``policy`` (default: the safest policy)."""
    safest = safest_policy(mdp)
    pi = safest.policy if policy is None else _check_policy(mdp, policy)
    phi_star, feasible = optimal_ref(mdp, 1.0, safest)
    phi_star_d = ref_fixed_point(mdp, safest.policy, ref_discount)
    v_h = None
    if mdp.is_deterministic() and np.all((pi == 0) | (pi == 1)):
        v_h = reachability_value(mdp, pi)
    ref = constrained_optimal_reference(mdp, safest)
    return OracleSolution(
        V=policy_eval(mdp, pi, "reward"),
        V_c=policy_eval(mdp, pi, "cost"),
        V_h=v_h,
        phi=ref_fixed_point(mdp, pi, 1.0),
        phi_star=phi_star,
        phi_star_discounted=phi_star_d,
        safest_policy=safest.policy,
        v_c_star=safest.v_c,
        feasible_mask=feasible,
        constrained_optimal_V=ref.value,
        ref_discount=ref_discount,
    )
