"""Exact-expectation forms of the actor step, for finite-difference checks.

Everything here solves linear systems on a small :class:`FiniteMdp`; it is
meant for MDPs with a handful of states.
"""
from __future__ import annotations

import numpy as np

from respo.mdp import FiniteMdp


def softmax_policy(theta: np.ndarray) -> np.ndarray:
    z = np.exp(theta - theta.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _values(mdp: FiniteMdp, pi: np.ndarray):
    g = mdp.discount
    P = np.einsum("sa,sat->st", pi, mdp.transition)
    I = np.eye(mdp.n_states)
    r = np.einsum("sa,sa->s", pi, mdp.reward)
    v = np.linalg.solve(I - g * P, r)
    vc = np.linalg.solve(I - g * P, mdp.cost)
    q = mdp.reward + g * mdp.transition @ v
    qc = mdp.cost[:, None] + g * mdp.transition @ vc
    occupancy = np.linalg.solve((I - g * P).T, mdp.initial_distribution)
    return v, vc, q, qc, occupancy


def respo_lagrangian(mdp: FiniteMdp, theta: np.ndarray, p, lam: float) -> float:
    """``E_{s~d0}[-V(s)(1 - p(s)) + V_c(s)(lam (1 - p(s)) + p(s))]`` for the softmax policy."""
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (mdp.n_states,))
    v, vc, *_ = _values(mdp, softmax_policy(theta))
    per_state = -v * (1.0 - p) + vc * (lam * (1.0 - p) + p)
    return float(mdp.initial_distribution @ per_state)


def expected_update_direction(mdp: FiniteMdp, theta: np.ndarray, p, lam: float) -> np.ndarray:
    """Expectation of the per-step actor term ``gamma^t w(s_t, a_t) grad log pi(a_t|s_t)``.

    The gate uses ``p`` at the visited state, as the sampled update does.
    """
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (mdp.n_states,))
    pi = softmax_policy(theta)
    _, _, q, qc, occ = _values(mdp, pi)
    w = -q * (1.0 - p)[:, None] + qc * (lam * (1.0 - p) + p)[:, None]
    # for a softmax row, E_a[w(a) grad_theta log pi(a)] = pi * (w - E_pi[w])
    centred = w - np.sum(pi * w, axis=1, keepdims=True)
    return occ[:, None] * pi * centred


def central_difference(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        up = theta.copy()
        dn = theta.copy()
        up[idx] += h
        dn[idx] -= h
        grad[idx] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
