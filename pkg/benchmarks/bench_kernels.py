"""Time the hot kernels under numba and under the plain-Python fallback.

Each backend runs in its own interpreter because the choice is made at
import time from FCRBESS_NO_NUMBA.

    python benchmarks/bench_kernels.py [--days 3] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from fcrbess._jit import backend
from fcrbess.bess import BessConfig, simulate
from fcrbess.controller import ControllerParams, MarketRules, emergency_trace
from fcrbess.data import SynthFrequencyParams, synth_frequency
from fcrbess.degradation import rainflow

days, repeat = int(sys.argv[1]), int(sys.argv[2])
bess = BessConfig.from_rating(1.6, 1.0)
rules = MarketRules.for_bess(1e6, bess.p_max_w)
df = synth_frequency(SynthFrequencyParams(), days * 86400.0, 10.0, seed=1).values
x = ControllerParams(2.0, 0.45, 0.1, 0.2)

def best(fn):
    fn()  # warm-up, includes compilation under numba
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

soc = simulate(bess, rules, x, df).soc
out = {
    "backend": backend(),
    "steps": int(df.size),
    "simulate": best(lambda: simulate(bess, rules, x, df)),
    "rainflow": best(lambda: rainflow(soc, bess.cell.capacity_ah)),
    "emergency": best(lambda: emergency_trace(df, 10.0)),
}
print(json.dumps(out))
"""


def run(days: int, repeat: int, disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("FCRBESS_NO_NUMBA", None)
    if disable:
        env["FCRBESS_NO_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(days), str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=3, help="simulated days at dt = 10 s")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    nb = run(args.days, args.repeat, disable=False)
    py = run(args.days, args.repeat, disable=True)
    print(f"{nb['steps']} steps; numba backend = {nb['backend']}, fallback = {py['backend']}")
    print(f"{'kernel':<10} {'numba [s]':>11} {'python [s]':>11} {'speed-up':>9}")
    for k in ("simulate", "rainflow", "emergency"):
        print(f"{k:<10} {nb[k]:>11.4f} {py[k]:>11.4f} {py[k] / nb[k]:>8.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
