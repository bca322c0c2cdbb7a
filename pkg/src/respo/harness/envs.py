"""Build training models (and oracle inputs) from an :class:`EnvConfig`."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from respo.envs.double_integrator import discretized_double_integrator
from respo.envs.drone import DroneTunnelSpec, lattice_model
from respo.envs.gridworld import PRESETS, build_gridworld
from respo.harness.config import ConfigError, EnvConfig
from respo.mdp import FiniteMdp, SparseModel


@dataclass
class BuiltEnv:
    model: FiniteMdp | SparseModel
    finite: FiniteMdp | None  # dense form for the oracle, when it fits
    state_mask: np.ndarray | None = None
    grid: object = None


def _params(spec, params: dict, key_prefix: str):
    fields = spec.__dataclass_fields__
    out = {}
    for k, v in params.items():
        if k not in fields:
            raise ConfigError(f"unknown parameter for this environment", key=f"{key_prefix}{k}")
        cur = getattr(spec, k)
        out[k] = type(cur)(v) if isinstance(cur, (int, float)) and not isinstance(cur, bool) else v
    return replace(spec, **out) if out else spec


def build_env(cfg: EnvConfig) -> BuiltEnv:
    if cfg.kind == "gridworld":
        if cfg.preset not in PRESETS:
            raise ConfigError(f"unknown gridworld preset {cfg.preset!r}; choose from {', '.join(sorted(PRESETS))}",
                              key="env.preset")
        spec = _params(PRESETS[cfg.preset](), cfg.params, "env.param.")
        mdp = build_gridworld(spec)
        return BuiltEnv(mdp, mdp, spec.state_mask())
    if cfg.kind == "double_integrator":
        if cfg.resolution < 3:
            raise ConfigError("resolution must be >= 3", key="env.resolution")
        mdp, grid = discretized_double_integrator(cfg.resolution)
        return BuiltEnv(mdp, mdp, None, grid)
    if cfg.kind == "drone_tunnel":
        spec = _params(DroneTunnelSpec(), cfg.params, "env.param.")
        return BuiltEnv(lattice_model(spec), None)
    if cfg.kind == "mdp_file":
        try:
            mdp = FiniteMdp.load(cfg.path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load MDP file: {exc}", key="env.path") from None
        return BuiltEnv(mdp, mdp)
    raise ConfigError(f"unknown environment {cfg.kind!r}", key="env.kind")
