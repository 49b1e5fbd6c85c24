"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the backend is chosen at
import time from KACZKO_DISABLE_NUMBA. Iteration counts must match exactly;
only wall times differ.

    python3 benchmarks/bench_backends.py [--m 1000 --n 200 --repeats 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from kaczko import BACKEND, GeneratorSpec, SolverConfig, generate, solve
m, n, repeats = (int(a) for a in sys.argv[1:4])
p = generate(GeneratorSpec(m=m, n=n, seed=1))
out = {"backend": BACKEND, "runs": {}}
for name in ("k", "ko", "rk", "rko", "mr"):
    cfg = SolverConfig.preset(name, rng_seed=11, max_iters=50000)
    solve(p, cfg)  # warm-up / compile
    best = float("inf")
    for _ in range(repeats):
        rep = solve(p, cfg)
        best = min(best, rep.wall_time)
    out["runs"][name] = {"it": rep.iterations, "best": best}
print(json.dumps(out))
"""


def run_backend(disable, m, n, repeats):
    env = dict(os.environ)
    env["KACZKO_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", WORKER, str(m), str(n), str(repeats)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=1000)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    fast = run_backend(False, args.m, args.n, args.repeats)
    slow = run_backend(True, args.m, args.n, args.repeats)
    print(f"{args.m}x{args.n} uniform [0,1], best of {args.repeats}")
    print(f"{'solver':6s} {'IT':>8s} {fast['backend']:>12s} {slow['backend']:>12s} {'speedup':>8s}")
    for name, a in fast["runs"].items():
        b = slow["runs"][name]
        same = "" if a["it"] == b["it"] else "  IT MISMATCH"
        print(f"{name:6s} {a['it']:8d} {a['best']:11.4f}s {b['best']:11.4f}s "
              f"{b['best'] / a['best']:7.1f}x{same}")


if __name__ == "__main__":
    main()
