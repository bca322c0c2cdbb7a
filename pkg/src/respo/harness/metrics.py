"""Metric rows and their CSV files.

Values are written with ``repr`` so a reader recovers the exact floats, which
keeps reruns byte-identical and lets aggregates be recomputed exactly.
Wall-clock time is the only nondeterministic field; it goes to a separate
timing file.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np


@dataclass
class MetricRow:
    iteration: int
    reward_mean: float
    reward_std: float
    violations_mean: float
    violations_std: float
    discounted_cost_mean: float
    lam: float
    ref_error: float
    feasible_zero_violation_rate: float
    status: str = "ok"
    wall_ms: float = float("nan")

    def __post_init__(self):
        for name in ("reward_std", "violations_std"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be non-negative")
        r = self.feasible_zero_violation_rate
        if not math.isnan(r) and not 0.0 <= r <= 1.0:
            raise ValueError("zero-violation rate must lie in [0, 1]")

    @classmethod
    def from_eval(cls, rec: dict, wall_ms: float = float("nan")) -> "MetricRow":
        return cls(
            iteration=int(rec["iteration"]),
            reward_mean=rec["eval_reward_mean"],
            reward_std=rec["eval_reward_std"],
            violations_mean=rec["eval_violations_mean"],
            violations_std=rec["eval_violations_std"],
            discounted_cost_mean=rec["eval_discounted_cost_mean"],
            lam=rec["lambda"],
            ref_error=rec["ref_error"],
            feasible_zero_violation_rate=rec["feasible_zero_violation_rate"],
            wall_ms=wall_ms,
        )


COLUMNS = [f.name for f in fields(MetricRow) if f.name != "wall_ms"]
NUMERIC = [c for c in COLUMNS if c not in ("iteration", "status")]


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_rows(path, rows: list[MetricRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([fmt(getattr(row, c)) for c in COLUMNS])


def write_timing(path, seeds_rows: dict[int, list[MetricRow]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "iteration", "wall_ms"])
        for seed, rows in seeds_rows.items():
            for row in rows:
                w.writerow([seed, row.iteration, f"{row.wall_ms:.3f}"])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for rec in csv.DictReader(fh):
            row = {"iteration": int(rec["iteration"]), "status": rec["status"]}
            row.update({c: float(rec[c]) for c in NUMERIC})
            out.append(row)
        return out


def aggregate(per_seed: list[list[MetricRow]]) -> list[list]:
    """Rows of ``iteration, n_seeds, <metric>_mean, <metric>_std, ...``.

    Seeds are aligned by row position; the population std (ddof 0) is used, so
    it is zero exactly when every seed reports the same value.
    """
    n = min(len(rows) for rows in per_seed)
    out = []
    for i in range(n):
        its = {rows[i].iteration for rows in per_seed}
        it = min(its)
        line = [it, len(per_seed)]
        for c in NUMERIC:
            vals = np.array([getattr(rows[i], c) for rows in per_seed], dtype=np.float64)
            if np.all(np.isnan(vals)):
                line += [float("nan"), float("nan")]
            else:
                mean = float(np.nanmean(vals))
                std = 0.0 if np.all(vals == vals[0]) else float(np.nanstd(vals))
                line += [mean, std]
        out.append(line)
    return out


def aggregate_columns() -> list[str]:
    cols = ["iteration", "n_seeds"]
    for c in NUMERIC:
        cols += [f"{c}_mean", f"{c}_std"]
    return cols


def write_aggregate(path, per_seed: list[list[MetricRow]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(aggregate_columns())
        for line in aggregate(per_seed):
            w.writerow([fmt(v) for v in line])
