"""Training throughput with compiled kernels vs the pure-numpy fallback.

    python benchmarks/bench_kernels.py --iterations 5000

Each backend runs in its own interpreter because the backend is fixed at import.
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = """
import json, sys, time, warnings
warnings.simplefilter("ignore")
from respo import _accel
from respo.envs.gridworld import PRESETS, build_gridworld
from respo.trainer import TrainerConfig, train
mdp = build_gridworld(PRESETS[sys.argv[2]]())
cfg = TrainerConfig(iterations=int(sys.argv[1]), eval_every=0)
train(mdp, TrainerConfig(iterations=10, eval_every=0))  # compile / warm caches
t = time.perf_counter()
res = train(mdp, cfg)
dt = time.perf_counter() - t
print(json.dumps({"backend": _accel.backend(), "seconds": dt, "steps": float(res.episodes[:, 2].sum())}))
"""


def run(iterations: int, preset: str, disable: bool) -> dict:
    env = dict(os.environ, RESPO_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(iterations), preset], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--preset", default="hazard5")
    args = ap.parse_args()
    rows = [run(args.iterations, args.preset, d) for d in (False, True)]
    for r in rows:
        print(f"{r['backend']:>7}: {args.iterations} episodes, {r['steps']:.0f} steps in {r['seconds']:.3f}s "
              f"({r['steps'] / r['seconds']:.0f} steps/s)")
    print(f"speedup: {rows[1]['seconds'] / rows[0]['seconds']:.1f}x")


if __name__ == "__main__":
    main()
