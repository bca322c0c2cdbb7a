"""Seeded experiment runs that write per-seed and aggregate metric CSVs."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from respo.envs.discretize import MAX_CELLS, memory_estimate
from respo.envs.gridworld import PRESETS
from respo.harness import metrics
from respo.harness.config import ConfigError, EnvConfig, ExperimentConfig, load_config
from respo.harness.envs import build_env
from respo.oracle import OracleError, solve
from respo.trainer import DivergenceError, train

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE, EXIT_DIVERGENCE = 0, 2, 3, 4


@dataclass
class ExperimentReport:
    status: int
    out_dir: Path
    seed_files: list = field(default_factory=list)
    aggregate_file: Path | None = None
    diverged_seeds: list = field(default_factory=list)
    results: dict = field(default_factory=dict)


def _oracle(cfg: ExperimentConfig, built):
    if not cfg.attach_oracle or built.finite is None:
        return None
    try:
        return solve(built.finite)
    except (OracleError, ValueError, MemoryError) as exc:
        log.warning("oracle not attached: %s", exc)
        return None


def run_seed(cfg: ExperimentConfig, built, oracle, seed: int):
    """Train one seed; returns ``(rows, result, diverged)``."""
    rows: list[metrics.MetricRow] = []
    t0 = time.perf_counter()

    def on_eval(rec):
        rows.append(metrics.MetricRow.from_eval(rec, (time.perf_counter() - t0) * 1e3))

    try:
        res = train(built.model, cfg.trainer, seed, oracle=oracle, state_mask=built.state_mask, on_eval=on_eval)
    except DivergenceError as exc:
        res = exc.result
        nan = float("nan")
        rows.append(metrics.MetricRow(res.diverged_at, nan, nan, nan, nan, nan, nan, nan, nan, status="diverged",
                                      wall_ms=(time.perf_counter() - t0) * 1e3))
        return rows, res, True
    return rows, res, False


def run_experiment(config) -> ExperimentReport:
    """Run every seed of ``config`` (a path or :class:`ExperimentConfig`)."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    built = build_env(cfg.env)
    oracle = _oracle(cfg, built)
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    report = ExperimentReport(EXIT_OK, out)
    per_seed = {}
    for seed in cfg.seeds:
        rows, res, diverged = run_seed(cfg, built, oracle, seed)
        path = out / f"metrics_seed{seed}.csv"
        metrics.write_rows(path, rows)
        report.seed_files.append(path)
        report.results[seed] = res
        per_seed[seed] = rows
        if diverged:
            report.diverged_seeds.append(seed)
            log.error("seed %d diverged at iteration %s", seed, res.diverged_at)
    report.aggregate_file = out / "metrics_aggregate.csv"
    metrics.write_aggregate(report.aggregate_file, list(per_seed.values()))
    metrics.write_timing(out / "timing.csv", per_seed)
    if report.diverged_seeds:
        report.status = EXIT_DIVERGENCE
    return report


def export_feasible_set(env_kind: str, resolution: int, output, preset: str = "hazard5") -> Path:
    """Per-cell optimal REF and feasible flag as CSV.

    Gridworld rows carry ``x, y`` cell coordinates; double-integrator rows carry
    the cell-centre position and velocity.
    """
    if env_kind == "double_integrator":
        n = resolution * resolution
        if n > MAX_CELLS:
            raise MemoryError(f"{n} cells exceeds the {MAX_CELLS}-cell limit "
                              f"(about {memory_estimate(n, 5) / 2**20:.0f} MiB)")
    elif env_kind != "gridworld":
        raise ConfigError(f"cannot export a feasible set for {env_kind!r}", key="env.kind")
    built = build_env(EnvConfig(env_kind, preset, resolution))
    sol = solve(built.finite)
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if built.grid is not None:
            centers = built.grid.centers()
            w.writerow(["cell", "x1", "x2", "phi_star", "feasible"])
            for s in range(built.finite.n_states):
                w.writerow([s, repr(float(centers[s, 0])), repr(float(centers[s, 1])),
                            repr(float(sol.phi_star[s])), int(sol.feasible_mask[s])])
        else:
            spec = PRESETS[preset]()
            w.writerow(["cell", "x", "y", "phi_star", "feasible"])
            for s in range(built.finite.n_states):
                x, y = spec.cell(s)
                w.writerow([s, x, y, repr(float(sol.phi_star[s])), int(sol.feasible_mask[s])])
    return output

