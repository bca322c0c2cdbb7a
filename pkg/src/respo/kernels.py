"""Hot loops for tabular actor-critic learners.

One jitted routine runs a chunk of episodes: roll out with the frozen policy,
then apply the per-step updates in the order critic -> policy -> REF ->
multiplier. The same source runs unjitted when numba is disabled.
"""
import numpy as np

from respo._accel import njit

# learner kinds
UNCONSTRAINED = 0
RESPO = 1
LAGRANGIAN = 2
FAC = 3
RCRL = 4
CBF = 5
RESPO_VH = 6
RESPO_MULTI = 7
LAGRANGIAN_MULTI = 8

# learn-flag slots
CRITIC, POLICY, REF, MULT = 0, 1, 2, 3

DIVERGENCE = 1e8


@njit
def softplus(x):
    if x > 30.0:
        return x
    return np.log1p(np.exp(x))


@njit
def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit
def softmax_row(logits, out):
    m = logits[0]
    for i in range(1, logits.shape[0]):
        if logits[i] > m:
            m = logits[i]
    z = 0.0
    for i in range(logits.shape[0]):
        out[i] = np.exp(logits[i] - m)
        z += out[i]
    for i in range(logits.shape[0]):
        out[i] /= z


@njit
def draw_index(cdf_row, u):
    k = 0
    n = cdf_row.shape[0]
    while k < n - 1 and u >= cdf_row[k]:
        k += 1
    return k


@njit
def draw_action(logits, u, buf):
    softmax_row(logits, buf)
    acc = 0.0
    n = buf.shape[0]
    for i in range(n - 1):
        acc += buf[i]
        if u < acc:
            return i
    return n - 1


@njit
def lam_of(omega, c, s, state_mult, lam_max):
    w = omega[c, s] if state_mult else omega[c, 0]
    lam = softplus(w)
    if lam > lam_max:
        lam = lam_max
    return lam


@njit
def ascend(omega, c, s, state_mult, step, grad, lo, hi):
    j = s if state_mult else 0
    w = omega[c, j]
    w = w + step * grad * sigmoid(w)
    if w < lo:
        w = lo
    elif w > hi:
        w = hi
    omega[c, j] = w


@njit
def run_chunk(kind, succ, cdf, reward, costs, absorbing, init_cdf, gamma, ref_gamma, horizon,
              theta, q, qc, p, omega, critic_max, chi, zetas, lam_max, omega_lo, omega_hi,
              theta_box, cbf_nu, cbf_dt, flags, state_mult, baseline, normalize, u_init, u, stats):
    """Run ``u.shape[0]`` episodes, updating the learner tables in place.

    With ``normalize`` the actor weight is divided by one plus the total
    multiplier mass acting on it, which bounds the step as multipliers grow.
    Returns the index of the first episode that diverged, or -1.
    """
    n_ep = u.shape[0]
    S, A = theta.shape
    C = costs.shape[0]
    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon + 1, dtype=np.int64)
    pi = np.empty(A)
    for e in range(n_ep):
        z1 = zetas[e, 0]
        z2 = zetas[e, 1]
        z3 = zetas[e, 2]
        z4 = zetas[e, 3]
        # ---- rollout with the frozen policy
        s = draw_index(init_cdf, u_init[e])
        T = 0
        states[0] = s
        terminated = absorbing[s]
        while T < horizon and not terminated:
            a = draw_action(theta[s], u[e, T, 0], pi)
            actions[T] = a
            s = succ[s, a, draw_index(cdf[s, a], u[e, T, 1])]
            T += 1
            states[T] = s
            terminated = absorbing[s]
        if not terminated and T > 0:
            actions[T] = draw_action(theta[states[T]], u[e, T, 0], pi)
        # ---- statistics
        ret = 0.0
        dret = 0.0
        disc = 1.0
        for t in range(T):
            r = reward[states[t], actions[t]]
            ret += r
            dret += disc * r
            for c in range(C):
                h = costs[c, states[t]]
                if h > 0:
                    stats[e, 3 + 2 * c] += 1.0
                stats[e, 4 + 2 * c] += disc * h
            disc *= gamma
        stats[e, 0] = ret
        stats[e, 1] = dret
        stats[e, 2] = T
        # ---- updates
        gt = 1.0
        for t in range(T):
            s = states[t]
            a = actions[t]
            s2 = states[t + 1]
            a2 = actions[t + 1]
            end = absorbing[s2]
            r = reward[s, a]
            if flags[CRITIC]:
                tgt = r if end else r + gamma * q[s2, a2]
                q[s, a] += z1 * (tgt - q[s, a])
                for c in range(C):
                    h = costs[c, s]
                    if critic_max[c]:
                        nxt = costs[c, s2] if end else qc[c, s2, a2]
                        tgt = max(h, gamma * nxt)
                    else:
                        nxt = costs[c, s2] / (1.0 - gamma) if end else qc[c, s2, a2]
                        tgt = h + gamma * nxt
                    qc[c, s, a] += z1 * (tgt - qc[c, s, a])
            qv = q[s, a]
            qc0 = qc[0, s, a]
            p0 = p[0, s]
            if flags[POLICY]:
                softmax_row(theta[s], pi)
                scale = 1.0
                if kind == UNCONSTRAINED:
                    w = -qv
                    if baseline:
                        v = 0.0
                        for b in range(A):
                            v += pi[b] * q[s, b]
                        w = -(qv - v)
                elif kind == RESPO or kind == RESPO_VH:
                    lam = lam_of(omega, 0, s, False, lam_max)
                    w = -qv * (1.0 - p0) + qc0 * (lam * (1.0 - p0) + p0)
                    scale = 1.0 + lam * (1.0 - p0)
                    if baseline:
                        v = 0.0
                        vc = 0.0
                        for b in range(A):
                            v += pi[b] * q[s, b]
                            vc += pi[b] * qc[0, s, b]
                        w -= -v * (1.0 - p0) + vc * (lam * (1.0 - p0) + p0)
                elif kind == LAGRANGIAN or kind == FAC or kind == RCRL:
                    lam = lam_of(omega, 0, s, state_mult, lam_max)
                    w = -qv + lam * qc0
                    scale = 1.0 + lam
                    if baseline:
                        v = 0.0
                        for b in range(A):
                            v += pi[b] * (-q[s, b] + lam * qc[0, s, b])
                        w -= v
                elif kind == CBF:
                    lam = lam_of(omega, 0, s, False, lam_max)
                    g = (costs[0, s2] - costs[0, s]) / cbf_dt + cbf_nu * costs[0, s]
                    if g < 0.0:
                        g = 0.0
                    w = -qv + lam * g
                    scale = 1.0 + lam
                    if baseline:
                        v = 0.0
                        for b in range(A):
                            v += pi[b] * q[s, b]
                        w += v
                elif kind == RESPO_MULTI:
                    p1 = p[0, s]
                    p2 = p[1, s]
                    l1 = lam_of(omega, 0, s, False, lam_max)
                    l2 = lam_of(omega, 1, s, False, lam_max)
                    lsc = lam_of(omega, 2, s, False, lam_max)
                    w = 0.0
                    scale = 1.0 + (1.0 - p1) * (l1 + (1.0 - p2) * (l2 + lsc))
                    for b in range(A):
                        # evaluate the composite weight for b == a, and the baseline if requested
                        if b != a and not baseline:
                            continue
                        inner2 = -q[s, b] + lsc * qc[2, s, b] + l2 * qc[1, s, b]
                        block2 = inner2 * (1.0 - p2) + qc[1, s, b] * p2
                        wb = (block2 + l1 * qc[0, s, b]) * (1.0 - p1) + qc[0, s, b] * p1
                        if b == a:
                            w += wb
                        if baseline:
                            w -= pi[b] * wb
                else:  # LAGRANGIAN_MULTI
                    w = -qv
                    for c in range(C):
                        lc = lam_of(omega, c, s, state_mult, lam_max)
                        w += lc * qc[c, s, a]
                        scale += lc
                    if baseline:
                        for b in range(A):
                            wb = -q[s, b]
                            for c in range(C):
                                wb += lam_of(omega, c, s, state_mult, lam_max) * qc[c, s, b]
                            w -= pi[b] * wb
                if normalize:
                    w /= scale
                coef = z2 * gt * w
                for b in range(A):
                    grad = -pi[b]
                    if b == a:
                        grad += 1.0
                    v = theta[s, b] - coef * grad
                    if v > theta_box:
                        v = theta_box
                    elif v < -theta_box:
                        v = -theta_box
                    theta[s, b] = v
            if flags[REF]:
                n_ref = 2 if kind == RESPO_MULTI else 1
                for c in range(n_ref):
                    ind = 1.0 if costs[c, s] > 0 else 0.0
                    nxt = (1.0 if costs[c, s2] > 0 else 0.0) if end else p[c, s2]
                    tgt = max(ind, ref_gamma * nxt)
                    v = p[c, s] + z3 * (tgt - p[c, s])
                    p[c, s] = min(1.0, max(0.0, v))
                    if end:
                        ind2 = 1.0 if costs[c, s2] > 0 else 0.0
                        p[c, s2] += z3 * (ind2 - p[c, s2])
            if flags[MULT]:
                if kind == RESPO or kind == RESPO_VH:
                    ascend(omega, 0, s, False, z4, qc0 * (1.0 - p0), omega_lo, omega_hi)
                elif kind == LAGRANGIAN:
                    ascend(omega, 0, s, False, z4, qc0 - chi[0], omega_lo, omega_hi)
                elif kind == FAC or kind == RCRL:
                    ascend(omega, 0, s, True, z4, qc0 - chi[0], omega_lo, omega_hi)
                elif kind == CBF:
                    g = (costs[0, s2] - costs[0, s]) / cbf_dt + cbf_nu * costs[0, s]
                    if g < 0.0:
                        g = 0.0
                    ascend(omega, 0, s, False, z4, g, omega_lo, omega_hi)
                elif kind == RESPO_MULTI:
                    p1 = p[0, s]
                    p2 = p[1, s]
                    ascend(omega, 0, s, False, z4, qc[0, s, a] * (1.0 - p1), omega_lo, omega_hi)
                    ascend(omega, 1, s, False, z4, qc[1, s, a] * (1.0 - p2) * (1.0 - p1), omega_lo, omega_hi)
                    ascend(omega, 2, s, False, z4, (qc[2, s, a] - chi[2]) * (1.0 - p2) * (1.0 - p1),
                           omega_lo, omega_hi)
                elif kind == LAGRANGIAN_MULTI:
                    for c in range(C):
                        ascend(omega, c, s, state_mult, z4, qc[c, s, a] - chi[c], omega_lo, omega_hi)
            gt *= gamma
        # an episode that starts in an absorbing state still refreshes its REF entry
        if T == 0 and terminated and flags[REF]:
            s = states[0]
            n_ref = 2 if kind == RESPO_MULTI else 1
            for c in range(n_ref):
                ind = 1.0 if costs[c, s] > 0 else 0.0
                p[c, s] += z3 * (ind - p[c, s])
        big = 0.0
        for i in range(S):
            for b in range(A):
                x = abs(q[i, b])
                if x > big:
                    big = x
        for c in range(C):
            for i in range(S):
                for b in range(A):
                    x = abs(qc[c, i, b])
                    if x > big:
                        big = x
        if big > DIVERGENCE or big != big:
            return e
    return -1


@njit
def greedy_rollouts(succ, cdf, reward, costs, absorbing, gamma, policy_actions, starts, horizon, u):
    """Deterministic-policy rollouts; returns per-episode stats like :func:`run_chunk`."""
    n = starts.shape[0]
    C = costs.shape[0]
    stats = np.zeros((n, 3 + 2 * C))
    for i in range(n):
        s = starts[i]
        disc = 1.0
        t = 0
        while t < horizon and not absorbing[s]:
            a = policy_actions[s]
            stats[i, 0] += reward[s, a]
            stats[i, 1] += disc * reward[s, a]
            for c in range(C):
                h = costs[c, s]
                if h > 0:
                    stats[i, 3 + 2 * c] += 1.0
                stats[i, 4 + 2 * c] += disc * h
            s = succ[s, a, draw_index(cdf[s, a], u[i, t])]
            disc *= gamma
            t += 1
        stats[i, 2] = t
    return stats
