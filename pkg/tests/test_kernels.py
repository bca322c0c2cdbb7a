import os
import subprocess
import sys

import numpy as np
import pytest

from respo import _accel

SCRIPT = """
import sys, warnings
import numpy as np
warnings.simplefilter("ignore")
from respo import _accel
from respo.envs.gridworld import PRESETS, build_gridworld
from respo.trainer import TrainerConfig, train
res = train(build_gridworld(PRESETS["hazard5"]()), TrainerConfig(iterations=300, eval_every=100), 2)
np.save(sys.argv[1], np.concatenate([res.episodes.ravel(), res.state.theta.ravel(), res.state.p.ravel()]))
print(_accel.backend())
"""


def _run(path, disable):
    env = dict(os.environ, RESPO_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT, str(path)], env=env, capture_output=True, text=True,
                         check=True)
    return out.stdout.strip(), np.load(path)


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable")
def test_pure_numpy_fallback_matches_compiled(tmp_path):
    fast_backend, fast = _run(tmp_path / "a.npy", False)
    slow_backend, slow = _run(tmp_path / "b.npy", True)
    assert fast_backend == "numba" and slow_backend != "numba"
    assert np.allclose(fast, slow, rtol=0, atol=1e-12)
