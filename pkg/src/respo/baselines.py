"""Comparison learners sharing the tabular actor-critic plumbing."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from respo.mdp import FiniteMdp
from respo.oracle import safest_policy, solve
from respo.trainer import TrainerConfig, TrainResult, as_model, init_state, inv_softplus, train


class BaselineKind(str, Enum):
    UNCONSTRAINED = "unconstrained"
    SCALAR_LAGRANGIAN = "scalar_lagrangian"
    FAC_ZERO_THRESHOLD = "fac_zero_threshold"
    RCRL = "rcrl"
    CBF = "cbf"
    RESPO_WITH_VH = "respo_with_vh_ablation"
    LAGRANGIAN_CHI_ZERO = "lagrangian_chi_zero_ablation"


@dataclass(frozen=True)
class Baseline:
    kind: BaselineKind
    chi: float = 0.0
    nu: float = 0.2

    def __post_init__(self):
        if self.chi < 0:
            raise ValueError("chi must be non-negative")
        if self.nu <= 0:
            raise ValueError("nu must be positive")


def _run(env, config: TrainerConfig, kind: str, seed: int, **kw) -> TrainResult:
    return train(env, replace(config, kind=kind), seed, **kw)


def train_unconstrained(env, config: TrainerConfig, seed: int = 0, **kw) -> TrainResult:
    return _run(env, config, "unconstrained", seed, **kw)


def train_scalar_lagrangian(env, chi: float, config: TrainerConfig, seed: int = 0, **kw) -> TrainResult:
    """``chi`` bounds the discounted cost return; ``inf`` leaves the multiplier at its floor."""
    if chi < 0:
        raise ValueError("chi must be non-negative")
    return train(env, replace(config, kind="scalar_lagrangian", chi=(float(chi),) + tuple(config.chi[1:])), seed, **kw)


def train_lagrangian_chi_zero(env, config: TrainerConfig, seed: int = 0, **kw) -> TrainResult:
    return train(env, replace(config, kind="lagrangian_chi_zero_ablation", chi=(0.0,) + tuple(config.chi[1:])),
                 seed, **kw)


def train_rcrl(env, config: TrainerConfig, seed: int = 0, **kw) -> TrainResult:
    """Max-Bellman reachability critic with a per-state multiplier."""
    return train(env, replace(config, kind="rcrl", chi=(0.0,) + tuple(config.chi[1:])), seed, **kw)


def train_fac(env, config: TrainerConfig, seed: int = 0, **kw) -> TrainResult:
    """Discounted-cost critic with a per-state multiplier and zero threshold."""
    return train(env, replace(config, kind="fac_zero_threshold", chi=(0.0,) + tuple(config.chi[1:])), seed, **kw)


def train_cbf(env, config: TrainerConfig, nu: float = 0.2, seed: int = 0, **kw) -> TrainResult:
    if nu <= 0:
        raise ValueError("nu must be positive")
    return train(env, replace(config, kind="cbf", cbf_nu=float(nu)), seed, **kw)


def train_respo_with_vh(env, config: TrainerConfig, seed: int = 0, **kw) -> TrainResult:
    return _run(env, config, "respo_with_vh_ablation", seed, **kw)


def train_baseline(env, baseline: Baseline, config: TrainerConfig, seed: int = 0, **kw) -> TrainResult:
    k = BaselineKind(baseline.kind)
    if k is BaselineKind.SCALAR_LAGRANGIAN:
        return train_scalar_lagrangian(env, baseline.chi, config, seed, **kw)
    if k is BaselineKind.CBF:
        return train_cbf(env, config, baseline.nu, seed, **kw)
    fn = {
        BaselineKind.UNCONSTRAINED: train_unconstrained,
        BaselineKind.FAC_ZERO_THRESHOLD: train_fac,
        BaselineKind.RCRL: train_rcrl,
        BaselineKind.RESPO_WITH_VH: train_respo_with_vh,
        BaselineKind.LAGRANGIAN_CHI_ZERO: train_lagrangian_chi_zero,
    }[k]
    return fn(env, config, seed, **kw)


def train_oracle_clamped(mdp: FiniteMdp, config: TrainerConfig, seed: int = 0, ref=None, **kw) -> TrainResult:
    """RESPO with the REF pinned to the optimal REF and the multiplier pinned at ``lam_max``.

    ``ref`` defaults to the discounted optimal REF from the oracle.
    """
    if ref is None:
        ref = solve(mdp).phi_star_discounted
    cfg = replace(config, kind="respo", freeze_ref=True, freeze_multiplier=True)
    st = init_state(as_model(mdp), cfg)
    st.p[0] = np.asarray(ref, dtype=np.float64)
    st.omega[:] = inv_softplus(cfg.lam_max)
    return train(mdp, cfg, seed, state=st, **kw)


def safest_action_agreement(mdp: FiniteMdp, actions, states=None) -> float:
    """Fraction of ``states`` (default: non-absorbing infeasible ones) whose action is cost-optimal."""
    sol = solve(mdp)
    if states is None:
        states = np.flatnonzero(~sol.feasible_mask & ~mdp.absorbing)
    if len(states) == 0:
        return 1.0
    optimal = safest_policy(mdp).optimal_actions
    actions = np.asarray(actions)
    return float(np.mean(optimal[states, actions[states]]))
