import csv

import numpy as np
import pytest

from respo.harness import metrics
from respo.harness.cli import main
from respo.harness.config import ConfigError, loads_config
from respo.harness.runner import EXIT_DIVERGENCE, export_feasible_set, run_experiment
from respo.mdp import FiniteMdp
from respo.envs.gridworld import build_gridworld, open_grid

pytestmark = pytest.mark.filterwarnings("ignore::respo.trainer.LambdaMaxWarning")

SMALL = """\
env.kind = gridworld
env.preset = hazard5
run.name = small
run.seeds = 0, 1
run.iterations = 10
eval.every = 1
eval.episodes = 5
output.dir = {out}
"""


def test_config_error_names_line_and_key():
    with pytest.raises(ConfigError) as err:
        loads_config("run.iterations = 5\nenv.kind = lava\n")
    assert err.value.line == 2 and err.value.key == "env.kind"
    assert "line 2" in str(err.value)
    with pytest.raises(ConfigError) as err:
        loads_config("run.iterations = 5\nrun.itterations = 6\n")
    assert err.value.key == "run.itterations"
    with pytest.raises(ConfigError):
        loads_config("run.iterations = 0\n")
    with pytest.raises(ConfigError):
        loads_config("no equals sign\n")


def test_ten_iterations_give_ten_rows(tmp_path):
    report = run_experiment(loads_config(SMALL.format(out=tmp_path)))
    assert report.status == 0
    for path in report.seed_files:
        lines = path.read_text().splitlines()
        assert len(lines) == 11
        assert lines[0].split(",") == metrics.COLUMNS


def test_aggregate_recomputes_from_seed_files(tmp_path):
    report = run_experiment(loads_config(SMALL.format(out=tmp_path)))
    per_seed = [metrics.read_rows(p) for p in report.seed_files]
    with open(report.aggregate_file) as fh:
        agg = list(csv.DictReader(fh))
    assert len(agg) == 10
    for i, row in enumerate(agg):
        for c in metrics.NUMERIC:
            vals = np.array([rows[i][c] for rows in per_seed])
            if np.all(np.isnan(vals)):
                continue
            assert abs(float(row[f"{c}_mean"]) - np.nanmean(vals)) <= 1e-12
            assert abs(float(row[f"{c}_std"]) - np.nanstd(vals)) <= 1e-12


def _row(it, v):
    return metrics.MetricRow(it, v, 0.0, 0.0, 0.0, 0.0, 1.0, 0.1, 1.0)


def test_std_zero_iff_seeds_agree():
    same = metrics.aggregate([[_row(1, 0.5)], [_row(1, 0.5)]])[0]
    diff = metrics.aggregate([[_row(1, 0.5)], [_row(1, 0.7)]])[0]
    cols = metrics.aggregate_columns()
    k = cols.index("reward_mean_std")
    assert same[k] == 0.0 and diff[k] > 0.0


def test_metric_row_validation():
    with pytest.raises(ValueError):
        metrics.MetricRow(1, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        metrics.MetricRow(1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.5)


def test_divergence_exit_code(tmp_path):
    base = build_gridworld(open_grid(4, 1))
    big = FiniteMdp(base.transition, base.reward * 1e12, base.cost, base.discount, base.initial_distribution,
                    base.horizon, base.absorbing)
    big.save(tmp_path / "big.mdp")
    text = f"env.kind = mdp_file\nenv.path = {tmp_path / 'big.mdp'}\nrun.iterations = 100\noutput.dir = {tmp_path}\n"
    report = run_experiment(loads_config(text))
    assert report.status == EXIT_DIVERGENCE
    assert "diverged" in report.seed_files[0].read_text()


def test_cli_exit_codes(tmp_path, monkeypatch):
    monkeypatch.setenv("RESPO_OUTPUT_ROOT", str(tmp_path))
    good = tmp_path / "good.cfg"
    good.write_text(SMALL.format(out="runs"))
    assert main(["run", str(good)]) == 0
    assert (tmp_path / "runs" / "small" / "metrics_seed0.csv").exists()
    bad = tmp_path / "bad.cfg"
    bad.write_text("env.kind = lava\n")
    assert main(["run", str(bad)]) == 2
    assert main(["export-feasible", "double_integrator", "500", "fs.csv"]) == 2
    with pytest.raises(SystemExit) as err:
        main(["accept", "fullest"])
    assert err.value.code == 2


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_export_feasible_sets(tmp_path):
    rows = _read(export_feasible_set("gridworld", 0, tmp_path / "open.csv", preset="open"))
    assert all(r["feasible"] == "1" for r in rows)
    rows = _read(export_feasible_set("gridworld", 0, tmp_path / "h.csv", preset="hazard5"))
    hazard = [r for r in rows if (r["x"], r["y"]) == ("2", "2")][0]
    assert float(hazard["phi_star"]) == 1.0 and hazard["feasible"] == "0"
    rows = _read(export_feasible_set("double_integrator", 21, tmp_path / "di.csv"))
    assert len(rows) == 441 and list(rows[0]) == ["cell", "x1", "x2", "phi_star", "feasible"]
    with pytest.raises(ConfigError):
        export_feasible_set("drone_tunnel", 5, tmp_path / "x.csv")
