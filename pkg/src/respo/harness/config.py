"""Flat ``dotted.key = value`` experiment configs.

Example::

    env.kind = gridworld
    env.preset = hazard5
    learner.kind = respo
    learner.schedule.c4 = 0.05
    run.seeds = 0, 1, 2
    run.iterations = 20000
    eval.every = 1000
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from respo.schedules import LINEAR, POLYNOMIAL, Schedule, ScheduleSet
from respo.trainer import KINDS, TrainerConfig

OUTPUT_ROOT_ENV = "RESPO_OUTPUT_ROOT"
ENV_KINDS = ("gridworld", "double_integrator", "drone_tunnel", "mdp_file")
DEFAULT_RHO = (0.55, 0.65, 0.80, 1.00)


class ConfigError(ValueError):
    """Bad config input; carries the offending line number and key when known."""

    def __init__(self, msg: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.line = line
        self.key = key


def parse_text(text: str) -> dict[str, tuple[str, int]]:
    """``{key: (raw value, line number)}``; ``#`` starts a comment."""
    out: dict[str, tuple[str, int]] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", n)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not part.replace("_", "").isalnum() for part in key.split(".")):
            raise ConfigError("malformed key", n, key or None)
        if key in out:
            raise ConfigError(f"duplicate key (first set on line {out[key][1]})", n, key)
        out[key] = (value, n)
    return out


class _Reader:
    def __init__(self, entries: dict[str, tuple[str, int]]):
        self.entries = entries
        self.used: set[str] = set()

    def _get(self, key, default, conv, what):
        if key not in self.entries:
            return default
        self.used.add(key)
        raw, line = self.entries[key]
        try:
            return conv(raw)
        except (ValueError, TypeError):
            raise ConfigError(f"expected {what}, got {raw!r}", line, key) from None

    def str(self, key, default=None):
        return self._get(key, default, str, "a string")

    def int(self, key, default=None):
        return self._get(key, default, int, "an integer")

    def float(self, key, default=None):
        return self._get(key, default, float, "a number")

    def bool(self, key, default=False):
        def conv(raw):
            v = raw.lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return self._get(key, default, conv, "a boolean")

    def floats(self, key, default=()):
        return self._get(key, default, lambda raw: tuple(float(x) for x in raw.split(",") if x.strip()),
                         "a comma-separated list of numbers")

    def ints(self, key, default=()):
        return self._get(key, default, lambda raw: tuple(int(x) for x in raw.split(",") if x.strip()),
                         "a comma-separated list of integers")

    def fail(self, key, msg):
        line = self.entries[key][1] if key in self.entries else None
        raise ConfigError(msg, line, key)

    def leftovers(self):
        return sorted(set(self.entries) - self.used, key=lambda k: self.entries[k][1])


@dataclass
class EnvConfig:
    kind: str = "gridworld"
    preset: str = "hazard5"
    resolution: int = 41
    path: str | None = None
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    env: EnvConfig = field(default_factory=EnvConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seeds: tuple = (0,)
    attach_oracle: bool = True
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list is empty", key="run.seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct", key="run.seeds")
        if self.trainer.iterations < 1:
            raise ConfigError("iteration budget must be >= 1", key="run.iterations")

    def output_path(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out / self.name


def _schedules(r: _Reader) -> ScheduleSet:
    law = r.str("learner.schedule.law", POLYNOMIAL)
    if law not in (POLYNOMIAL, LINEAR):
        r.fail("learner.schedule.law", f"unknown law {law!r} (polynomial or linear)")
    k0 = r.float("learner.schedule.k0", 1.0)
    horizon = r.int("learner.schedule.K", None)
    scheds = []
    for i in range(1, 5):
        c = r.float(f"learner.schedule.c{i}", 1.0)
        rho = r.float(f"learner.schedule.rho{i}", DEFAULT_RHO[i - 1])
        try:
            if law == LINEAR:
                if horizon is None:
                    r.fail("learner.schedule.K", "linear schedules need learner.schedule.K")
                scheds.append(Schedule(LINEAR, c, K=horizon))
            else:
                scheds.append(Schedule(POLYNOMIAL, c, rho, k0=k0))
        except ConfigError:
            raise
        except ValueError as exc:
            key = f"learner.schedule.c{i}"
            r.fail(key if key in r.entries else "learner.schedule.k0", str(exc))
    return ScheduleSet(*scheds)


def build_config(entries: dict[str, tuple[str, int]]) -> ExperimentConfig:
    r = _Reader(entries)
    env_kind = r.str("env.kind", "gridworld")
    if env_kind not in ENV_KINDS:
        r.fail("env.kind", f"unknown environment {env_kind!r}; choose from {', '.join(ENV_KINDS)}")
    env = EnvConfig(env_kind, r.str("env.preset", "hazard5"), r.int("env.resolution", 41), r.str("env.path"))
    for key in list(entries):
        if key.startswith("env.param."):
            env.params[key[len("env.param."):]] = r.float(key)
    if env_kind == "mdp_file" and not env.path:
        r.fail("env.path", "env.kind = mdp_file needs env.path")

    kind = r.str("learner.kind", "respo")
    if kind not in KINDS:
        r.fail("learner.kind", f"unknown learner {kind!r}; choose from {', '.join(sorted(KINDS))}")
    chi = r.floats("learner.chi", (0.0, 0.0, 0.0))
    chi = tuple(chi) + (0.0,) * max(0, 3 - len(chi))
    iterations = r.int("run.iterations", 10_000)
    if iterations < 1:
        r.fail("run.iterations", "iteration budget must be >= 1")
    lam_max = r.float("learner.lam_max", 100.0)
    if lam_max <= 0:
        r.fail("learner.lam_max", "must be positive")
    every = r.int("eval.every", 100)
    if every < 1:
        r.fail("eval.every", "must be >= 1")
    kwargs = dict(
        kind=kind,
        iterations=iterations,
        schedules=_schedules(r),
        lam_max=lam_max,
        omega_init=r.float("learner.omega_init", -2.0),
        p_init=r.float("learner.p_init", 0.5),
        theta_box=r.float("learner.theta_box", 20.0),
        ref_discount=r.float("learner.ref_discount", None),
        chi=chi,
        cbf_nu=r.float("learner.cbf_nu", 0.2),
        baseline=r.bool("learner.baseline", False),
        normalize=r.bool("learner.normalize", False),
        chunk=r.int("learner.chunk", 200),
        eval_every=every,
        eval_episodes=r.int("eval.episodes", 50),
        p_min=r.float("learner.p_min", 1.0),
    )
    try:
        trainer = TrainerConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seeds = r.ints("run.seeds", (0,))
    name = r.str("run.name", "experiment")
    attach = r.bool("oracle.attach", True)
    out = r.str("output.dir", "runs")
    left = r.leftovers()
    if left:
        r.fail(left[0], "unknown key")
    try:
        return ExperimentConfig(name, env, trainer, tuple(seeds), attach, out)
    except ConfigError as exc:
        if exc.key in entries:
            raise ConfigError(str(exc).split(": ", 1)[-1], entries[exc.key][1], exc.key) from None
        raise


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return build_config(parse_text(text))


def loads_config(text: str) -> ExperimentConfig:
    return build_config(parse_text(text))
