"""Time the stepping kernels under numba and under the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each backend runs in its own interpreter because the switch is read at import.
The numba column excludes the first (compiling) call.
"""

import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from tslab import _accel
from tslab.config import load_example
from tslab.linear import LinearSystem, fundamental_matrix
from tslab.sicnn import History, PicardOperator, simulate
from tslab.timescale import make_timescale

repeat = int(sys.argv[1])
ex1, _ = load_example(1)
ex2, _ = load_example(2)
pu = ex1.with_ts(make_timescale("periodic_union", 0, 60, a=1, b=0.5))
sys2 = LinearSystem([["-1+0.3*sin(t)", "0.2"], ["0.1", "-0.5"]], [0, 0], make_timescale("reals", 0, 20))
op = PicardOperator(ex2)
phi = 0.5 * np.cos(op.t)[:, None] * np.ones(9)

cases = {
    "simulate ex1 on R, [0, 20]": lambda: simulate(ex1, History.constant(0.3, 9), 0, 20),
    "simulate ex2 on Z, [0, 400]": lambda: simulate(ex2, History.constant(0.2, 9), 0, 400),
    "simulate ex1 on PU(1, 0.5)": lambda: simulate(pu, History.constant(-0.1, 9), 2, 50),
    "picard step ex2": lambda: op(phi),
    "fundamental matrix 2x2 on R": lambda: fundamental_matrix(sys2, 0.0),
}
out = {"backend": _accel.BACKEND, "times": {}}
for name, fn in cases.items():
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out["times"][name] = best
json.dump(out, sys.stdout)
"""


def run(flag: str, repeat: int) -> dict:
    env = dict(os.environ, TSLAB_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast, slow = run("1", args.repeat), run("0", args.repeat)
    print(f"{'case':32s} {fast['backend']:>10s} {slow['backend']:>10s} {'speedup':>8s}")
    for name, tf in fast["times"].items():
        ts = slow["times"][name]
        print(f"{name:32s} {tf:9.4f}s {ts:9.4f}s {ts / tf:7.1f}x")


if __name__ == "__main__":
    main()
