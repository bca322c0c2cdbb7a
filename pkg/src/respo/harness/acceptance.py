"""Acceptance checks, one function per criterion.

Each ``criterion_N`` returns a :class:`CriterionResult` with the measured
quantities next to the threshold they are compared against. The fast tier
runs the exact/property checks; the full tier adds the learning experiments.
"""
from __future__ import annotations

import csv
import json
import logging
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np

from respo.envs.double_integrator import discretized_double_integrator
from respo.envs.drone import CLOSE, FAR, WALL, DroneTunnelSpec, lattice_model
from respo.envs.gridworld import PRESETS, build_gridworld
from respo.gradcheck import central_difference, expected_update_direction, relative_error, respo_lagrangian
from respo.kernels import draw_index
from respo.mdp import FiniteMdp, monte_carlo, random_mdp, random_policy
from respo.oracle import (
    policy_eval, reachable_under, ref_bellman, ref_fixed_point, reentry_certificates, solve,
)
from respo.schedules import polynomial_set
from respo.trainer import LambdaMaxWarning, TrainerConfig, evaluate, lambda_max_bound, train

log = logging.getLogger(__name__)

TIERS = ("fast", "full")
FAST = (1, 2, 3, 7, 10, 11)
ALL = tuple(range(1, 12))

# training setups shared by the gridworld experiments
GRID_SCHEDULE = dict(c=(1.0, 1.0, 1.0, 0.05), k0=1000.0)
GRID_EPISODES = 100_000
REF_SCHEDULE = dict(c=(0.5, 0.5, 0.5, 0.1), k0=100.0)
REF_EPISODES = 200_000
DI_SCHEDULE = dict(c=(1.0, 0.1, 1.0, 0.05), k0=1000.0)
DI_EPISODES = 300_000
DI_CANONICAL_START = (2.0, 3.0)
TUNNEL_SCHEDULE = dict(c=(1.0, 0.1, 1.0, 0.01), k0=1000.0)
TUNNEL_EPISODES = 100_000
TUNNEL_SOFT_BUDGET = 8.0
SEEDS = (0, 1, 2, 3, 4)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    threshold: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{tag}] criterion {self.number:2d} {self.title}: {shown} (need {self.threshold}) [{self.seconds:.1f}s]"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(str(_short(x)) for x in v) + "]"
    return v


@dataclass
class AcceptanceReport:
    tier: str
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list:
        return [r.number for r in self.results if not r.passed]

    def to_json(self) -> str:
        return json.dumps({"tier": self.tier, "passed": self.passed, "failures": self.failures,
                           "criteria": [asdict(r) for r in self.results]}, indent=2, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _timed(number, title, threshold, fn):
    t0 = time.perf_counter()
    passed, measured = fn()
    return CriterionResult(number, title, bool(passed), measured, threshold, time.perf_counter() - t0)


def _grid_config(kind="respo", schedule=GRID_SCHEDULE, episodes=GRID_EPISODES, **kw) -> TrainerConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return TrainerConfig(kind=kind, iterations=episodes, eval_every=episodes,
                             schedules=polynomial_set(schedule["c"], k0=schedule["k0"]),
                             lam_max=kw.pop("lam_max", 1000.0), baseline=kw.pop("baseline", True), **kw)


def _train(env, cfg, seed, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LambdaMaxWarning)
        return train(env, cfg, seed, **kw)


# -- 1: REF operator contraction ------------------------------------------------------


def criterion_1(n_mdps=10, pairs=100, ref_discount=0.99, seed=1) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        bad = 0
        for _ in range(n_mdps):
            mdp = random_mdp(rng, int(rng.integers(3, 21)), int(rng.integers(2, 4)))
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            for _ in range(pairs):
                p, q = rng.random(mdp.n_states), rng.random(mdp.n_states)
                lhs = np.max(np.abs(ref_bellman(mdp, pi, p, ref_discount) - ref_bellman(mdp, pi, q, ref_discount)))
                rhs = ref_discount * np.max(np.abs(p - q))
                worst = max(worst, lhs / rhs if rhs > 0 else 0.0)
                bad += lhs > rhs + 1e-12
        return bad == 0, {"violations": int(bad), "worst_lhs_over_rhs": worst}

    return _timed(1, "REF operator contraction", "0 violations beyond 1e-12", run)


# -- 2: Monte-Carlo reach probability vs REF fixed point -----------------------------------


def criterion_2(n_mdps=5, n_traj=100_000, horizon=200, seed=2) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        misses = 0
        checked = 0
        for _ in range(n_mdps):
            mdp = random_mdp(rng, int(rng.integers(4, 11)), 2)
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            phi = ref_fixed_point(mdp, pi, 1.0)
            for s in range(mdp.n_states):
                hit = monte_carlo(mdp, pi, np.full(n_traj, s), horizon, rng)[0]
                est = hit.mean()
                se = np.sqrt(phi[s] * (1.0 - phi[s]) / n_traj)
                z = abs(est - phi[s]) / se if se > 0 else (0.0 if est == phi[s] else np.inf)
                worst = max(worst, z)
                misses += z > 3.0
                checked += 1
        return misses == 0, {"states_checked": checked, "outside_3se": int(misses), "max_z": worst}

    return _timed(2, "Monte-Carlo reach probability matches REF fixed point", "|z| <= 3 at every state", run)


# -- 3: zero cost value iff no violating state is reachable --------------------------------


def criterion_3(n_mdps=20, n_policies=20, seed=3) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        counter = 0
        checked = 0
        for _ in range(n_mdps):
            mdp = random_mdp(rng, int(rng.integers(3, 13)), int(rng.integers(2, 4)), violation_rate=0.2)
            for _ in range(n_policies):
                pi = random_policy(rng, mdp.n_states, mdp.n_actions, sparsity=0.5)
                vc = policy_eval(mdp, pi, "cost")
                for s in range(mdp.n_states):
                    clean = not np.any(mdp.violation[reachable_under(mdp, pi, s)])
                    counter += (vc[s] <= 1e-9) != clean
                    checked += 1
        return counter == 0, {"pairs_checked": checked, "counterexamples": int(counter)}

    return _timed(3, "zero cost value iff violation-free reachable set", "0 counterexamples", run)


# -- 4: re-entry on the double integrator --------------------------------------------------


def _greedy_path(nxt, actions, start, horizon):
    path = [int(start)]
    s = int(start)
    for _ in range(horizon):
        s = int(nxt[s, actions[s]])
        path.append(s)
    return path


def _enters(path, feasible):
    return any(feasible[s] for s in path)


def criterion_4(seeds=(0, 1, 2), episodes=DI_EPISODES, out_dir=None) -> CriterionResult:
    def run():
        mdp, grid = discretized_double_integrator(41)
        sol = solve(mdp)
        feasible = sol.feasible_mask
        inbox = ~mdp.violation
        starts = np.flatnonzero(inbox & ~feasible)
        reports = reentry_certificates(mdp, starts, feasible=feasible)
        certified = starts[[r.satisfied for r in reports]]
        nxt = mdp.successor_lists[0][:, :, 0]
        safest = np.argmax(sol.safest_policy, axis=1)
        oracle_ok = np.mean([_enters(_greedy_path(nxt, safest, s, mdp.horizon), feasible) for s in certified])
        canon = int(grid.locate(np.array([DI_CANONICAL_START]))[0])
        outcome = {}
        paths = {}
        for kind in ("respo", "rcrl"):
            cfg = _grid_config(kind, DI_SCHEDULE, episodes)
            outcome[kind] = []
            for seed in seeds:
                res = _train(mdp, cfg, seed)
                path = _greedy_path(nxt, res.state.greedy_actions(), canon, mdp.horizon)
                outcome[kind].append(_enters(path, feasible))
                paths.setdefault(kind, path)
        if out_dir is not None:
            _write_trajectories(Path(out_dir), grid, paths, feasible)
        passed = oracle_ok >= 0.95 and all(outcome["respo"]) and not any(outcome["rcrl"])
        return passed, {
            "infeasible_in_box": int(starts.size), "certified": int(certified.size),
            "oracle_reentry_rate": float(oracle_ok), "canonical_cell": canon,
            "respo_reenters": outcome["respo"], "rcrl_reenters": outcome["rcrl"],
        }

    return _timed(4, "re-entry from infeasible starts (double integrator)",
                  "oracle >= 95%, RESPO re-enters, RCRL does not", run)


def _write_trajectories(out: Path, grid, paths: dict, feasible) -> None:
    out.mkdir(parents=True, exist_ok=True)
    centers = grid.centers()
    for kind, path in paths.items():
        with open(out / f"double_integrator_{kind}_trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "cell", "x1", "x2", "feasible"])
            for t, s in enumerate(path):
                w.writerow([t, s, repr(float(centers[s, 0])), repr(float(centers[s, 1])), int(feasible[s])])


# -- 5: learned REF accuracy ---------------------------------------------------------------


def criterion_5(seeds=SEEDS, episodes=REF_EPISODES, min_steps=1_000_000, tol=0.1) -> CriterionResult:
    def run():
        spec = PRESETS["hazard5"]()
        mdp = build_gridworld(spec)
        sol = solve(mdp)
        cfg = TrainerConfig(iterations=episodes, eval_every=episodes,
                            schedules=polynomial_set(REF_SCHEDULE["c"], k0=REF_SCHEDULE["k0"]))
        errs, steps = [], []
        for seed in seeds:
            res = _train(mdp, cfg, seed, oracle=sol, state_mask=spec.state_mask())
            errs.append(res.evals[-1]["ref_error"])
            steps.append(int(res.episodes[:, 2].sum()))
        passed = max(errs) <= tol and min(steps) >= min_steps
        return passed, {"ref_error_per_seed": errs, "max_ref_error": max(errs), "min_env_steps": min(steps)}

    return _timed(5, "learned REF vs optimal REF (5x5 slip grid)", f"sup error <= {tol} for every seed", run)


# -- 6: feasible-region optimality -----------------------------------------------------------


def _greedy_pi(state, n_actions):
    pi = np.zeros((state.theta.shape[0], n_actions))
    pi[np.arange(pi.shape[0]), state.greedy_actions()] = 1.0
    return pi


def feasible_region_score(mdp: FiniteMdp, sol, res, seed: int, episodes_per_start: int = 10):
    """``(reward ratio to the constrained reference, zero-violation episode rate)`` on feasible starts."""
    starts = np.flatnonzero(sol.feasible_mask & ~mdp.absorbing & (mdp.initial_distribution > 0))
    v = policy_eval(mdp, _greedy_pi(res.state, mdp.n_actions), "reward")
    ratio = float(v[starts].mean() / sol.constrained_optimal_V[starts].mean())
    stats, _ = evaluate(mdp.to_sparse(), res.state, seed, 0, 0, np.repeat(starts, episodes_per_start))
    return ratio, float(np.mean(stats[:, 3] == 0))


def criterion_6(seeds=SEEDS, episodes=GRID_EPISODES, grids=("detour5", "detour6")) -> CriterionResult:
    def run():
        measured = {}
        passed = True
        cfg = _grid_config("respo", GRID_SCHEDULE, episodes)
        for name in grids:
            mdp = build_gridworld(PRESETS[name]())
            sol = solve(mdp)
            ratios, rates = [], []
            for seed in seeds:
                ratio, rate = feasible_region_score(mdp, sol, _train(mdp, cfg, seed), seed)
                ratios.append(ratio)
                rates.append(rate)
            measured[f"{name}_reward_ratio"] = float(np.mean(ratios))
            measured[f"{name}_zero_violation_rate"] = float(np.mean(rates))
            passed &= np.mean(ratios) >= 0.9 and np.mean(rates) >= 0.95
        return passed, measured

    return _timed(6, "feasible-region optimality", "reward ratio >= 0.9, zero-violation rate >= 0.95", run)


# -- 7: actor update vs finite-difference gradient ------------------------------------------


def criterion_7(n_cases=10, seed=7, gate=0.3, lam=2.0, h=1e-5, tol=1e-4) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_cases):
            P = rng.random((3, 2, 3))
            P /= P.sum(axis=2, keepdims=True)
            cost = np.where(rng.random(3) < 0.5, rng.random(3), 0.0)
            mdp = FiniteMdp(P, rng.uniform(-1, 1, (3, 2)), cost, 0.9, rng.dirichlet(np.ones(3)), 100)
            theta = rng.normal(size=(3, 2))
            direction = expected_update_direction(mdp, theta, gate, lam)
            numeric = central_difference(lambda t: respo_lagrangian(mdp, t, gate, lam), theta, h)
            worst = max(worst, relative_error(direction, numeric))
        return worst <= tol, {"cases": n_cases, "max_relative_error": worst}

    return _timed(7, "expected actor update matches Lagrangian gradient", f"relative error <= {tol:g}", run)


# -- 8: ablations ---------------------------------------------------------------------------


def _final_reward(mdp, res) -> float:
    v = policy_eval(mdp, _greedy_pi(res.state, mdp.n_actions), "reward")
    return float(mdp.initial_distribution @ v)


def criterion_8(seeds=SEEDS, episodes=GRID_EPISODES, grid="graded5") -> CriterionResult:
    def run():
        mdp = build_gridworld(PRESETS[grid]())
        c = GRID_SCHEDULE["c"]
        variants = {
            "compliant": _grid_config("respo", episodes=episodes),
            "ref_faster": _grid_config("respo", dict(c=(c[0], c[1], c[2] * 100, c[3]), k0=GRID_SCHEDULE["k0"]), episodes),
            "ref_slower": _grid_config("respo", dict(c=(c[0], c[1], c[2] * 0.01, c[3]), k0=GRID_SCHEDULE["k0"]), episodes),
            "vh": _grid_config("respo_with_vh_ablation", episodes=episodes),
            "lagrangian_chi0": _grid_config("lagrangian_chi_zero_ablation", episodes=episodes),
        }
        reward, viol = {}, {}
        for name, cfg in variants.items():
            rs, vs = [], []
            for seed in seeds:
                res = _train(mdp, cfg, seed)
                rs.append(_final_reward(mdp, res))
                vs.append(float(res.violations(0).sum()))
            reward[name] = float(np.mean(rs))
            viol[name] = float(np.mean(vs))
        base = reward["compliant"]
        a = reward["ref_faster"] <= 0.75 * base and reward["ref_slower"] <= 0.75 * base
        b = viol["vh"] >= 2.0 * viol["compliant"]
        cc = reward["lagrangian_chi0"] <= 0.5 * base
        measured = {f"reward_{k}": v for k, v in reward.items()}
        measured.update({"violation_steps_respo": viol["compliant"], "violation_steps_vh": viol["vh"],
                         "a_ref_rate": bool(a), "b_vh": bool(b), "c_chi0": bool(cc)})
        return a and b and cc, measured

    return _timed(8, "ablations (REF rate, V_h critic, chi=0 Lagrangian)",
                  "(a) both REF-rate moves <= 75% reward, (b) V_h >= 2x violations, (c) chi=0 <= 50% reward", run)


# -- 9: hard/soft constraints in the drone tunnel ---------------------------------------------


def tunnel_rollouts(model, actions, n: int, seed: int):
    """Greedy episodes; returns ``(costs, reached)`` with one ``[T, C]`` cost array per episode."""
    rng = np.random.default_rng(seed)
    out, reached = [], []
    for _ in range(n):
        s = int(draw_index(model.init_cdf, rng.random()))
        rows = []
        for _ in range(model.horizon):
            if model.absorbing[s]:
                break
            rows.append(model.costs[:, s].copy())
            a = actions[s]
            s = int(model.succ[s, a, draw_index(model.cdf[s, a], rng.random())])
        rows.append(model.costs[:, s].copy())
        out.append(np.array(rows))
        reached.append(bool(model.absorbing[s]))
    return out, reached


def criterion_9(seeds=(0, 1, 2), episodes=TUNNEL_EPISODES, n_eval=100) -> CriterionResult:
    def run():
        model = lattice_model(DroneTunnelSpec(slip=0.0))
        counts = {}
        mid_only = True
        reached = []
        for kind in ("respo_multi", "lagrangian_multi"):
            cfg = _grid_config(kind, TUNNEL_SCHEDULE, episodes, chi=(0.0, 0.0, TUNNEL_SOFT_BUDGET), p_init=0.0)
            walls, close = [], []
            for seed in seeds:
                res = _train(model, cfg, seed)
                eps, goal = tunnel_rollouts(model, res.state.greedy_actions(), n_eval, seed)
                walls.append(int(sum((e[:, WALL] > 0).sum() for e in eps)))
                close.append(int(sum((e[:, CLOSE] > 0).sum() for e in eps)))
                if kind == "respo_multi":
                    reached.append(int(sum(goal)))
                    for e in eps:
                        t = np.flatnonzero(e[:, FAR] > 0)
                        if t.size and (t.min() == 0 or t.max() == len(e) - 1):
                            mid_only = False
            counts[kind] = (walls, close)
        rw, rc = counts["respo_multi"]
        lw, lc = counts["lagrangian_multi"]
        passed = sum(rw) == 0 and np.mean(rc) < np.mean(lc) and mid_only
        return passed, {"respo_wall_steps": rw, "respo_close_steps": rc, "lagrangian_wall_steps": lw,
                        "lagrangian_close_steps": lc, "respo_soft_mid_episode_only": mid_only,
                        "respo_episodes_reaching_goal": reached}

    return _timed(9, "multi-constraint tunnel", "RESPO 0 wall steps, fewer close steps than Lagrangian, "
                  "soft violations mid-episode only", run)


# -- 10: lambda_max bound -----------------------------------------------------------------------


def _bound_decimal(r_max, gamma, horizon, h_delta, p_min) -> Decimal:
    getcontext().prec = 50
    g = Decimal(repr(gamma))
    log_b = (Decimal(repr(r_max)).ln() - (1 - g).ln() - horizon * g.ln()
             - Decimal(repr(h_delta)).ln() - Decimal(repr(p_min)).ln())
    return log_b.exp()


def criterion_10(seed=10) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        cases = [(1.0, 0.99, 100, 1.0, 1.0)]
        for _ in range(200):
            cases.append((float(rng.uniform(0.01, 10)), float(rng.uniform(0.5, 0.999)), int(rng.integers(0, 2000)),
                          float(rng.uniform(0.01, 5)), float(rng.uniform(0.01, 1))))
        worst = 0.0
        for case in cases:
            got = lambda_max_bound(*case)
            ref = _bound_decimal(*case)
            if ref > Decimal("1e300"):
                continue
            worst = max(worst, float(abs(Decimal(repr(got)) - ref) / ref))
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = P[1, 0, 1] = 1.0
        mdp = FiniteMdp(P, np.array([[1.0], [0.0]]), np.array([0.0, 1.0]), 0.99, np.array([1.0, 0.0]), 100,
                        np.array([False, True]))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            train(mdp, TrainerConfig(iterations=1, eval_every=0, lam_max=10.0), 0)
        warned = any(issubclass(w.category, LambdaMaxWarning) for w in caught)
        example = lambda_max_bound(1.0, 0.99, 100, 1.0, 1.0)
        return worst <= 1e-12 and warned, {"max_relative_error": worst, "cases": len(cases),
                                           "example_bound": example, "warns_below_bound": warned}

    return _timed(10, "lambda_max bound", "relative error <= 1e-12 and a warning below the bound", run)


# -- 11: byte-identical reruns --------------------------------------------------------------------

REPRO_CONFIG = """\
run.name = repro
env.kind = gridworld
env.preset = hazard5
learner.kind = respo
learner.schedule.c4 = 0.1
run.seeds = 0, 1
run.iterations = 2000
eval.every = 200
"""


def criterion_11() -> CriterionResult:
    def run():
        from respo.harness.config import loads_config
        from respo.harness.runner import run_experiment

        digests = []
        with tempfile.TemporaryDirectory() as tmp:
            for rep in range(2):
                cfg = loads_config(REPRO_CONFIG + f"output.dir = {tmp}/rep{rep}\n")
                report = run_experiment(cfg)
                files = sorted(report.seed_files) + [report.aggregate_file]
                digests.append([(p.name, p.read_bytes()) for p in files])
        same = digests[0] == digests[1]
        return same, {"files_compared": len(digests[0]), "identical": same}

    return _timed(11, "byte-identical metric CSVs on rerun", "identical bytes", run)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in ALL}


def run_acceptance_suite(tier: str = "fast", out_dir=None, echo=None) -> AcceptanceReport:
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}; choose from {', '.join(TIERS)}")
    numbers = FAST if tier == "fast" else ALL
    results = []
    for n in numbers:
        res = CRITERIA[n](out_dir=out_dir) if n == 4 else CRITERIA[n]()
        log.info(res.line())
        if echo is not None:
            echo(res.line())
        results.append(res)
    report = AcceptanceReport(tier, results)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / f"acceptance_{tier}.json").write_text(report.to_json())
    return report
