"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own subprocess because ``LDX_DISABLE_NUMBA`` is read
at import time. Results are checked for agreement and timings printed.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from ldx._accel import backend
from ldx._kernels import batch_greedy_kernel, value_iteration_kernel
from ldx.envs import build_gridworld
from ldx.lazygradient import run_agent

repeat = int(sys.argv[1])
env = build_gridworld()
out = {"backend": backend()}

def timed(fn):
    fn()  # warm-up (numba compile or cache load)
    t = time.perf_counter()
    for _ in range(repeat):
        val = fn()
    return (time.perf_counter() - t) / repeat, val

adm = np.ascontiguousarray(env.admissible)
P = np.ascontiguousarray(env.transitions)
r = np.ascontiguousarray(env.reward_means)
dt, (V, it, res) = timed(lambda: value_iteration_kernel(P, r, adm, env.gamma, 1e-10, 1_000_000,
                                                         np.zeros(env.num_states)))
out["value_iteration"] = {"seconds": dt, "V": V.tolist()}

rng = np.random.default_rng(0)
Pb = np.repeat(P[None], 200, axis=0) * rng.uniform(0.9, 1.1, (200,) + P.shape)
Pb /= Pb.sum(axis=3, keepdims=True)
rb = np.repeat(r[None], 200, axis=0) + 0.01 * rng.standard_normal((200,) + r.shape)
dt, g = timed(lambda: batch_greedy_kernel(Pb, rb, adm, env.gamma, 1e-8, 1_000_000))
out["batch_greedy"] = {"seconds": dt, "policies": np.asarray(g).tolist()}

for algo in ("lazygradient", "uniform", "qlearning"):
    dt, res = timed(lambda: run_agent(env, algo, 1000, seed=7))
    out[f"run_{algo}"] = {"seconds": dt, "pi_hat": res.pi_hat.tolist(),
                          "counts": res.visit_counts.tolist()}
print(json.dumps(out))
"""


def run_backend(disable, repeat):
    env = dict(os.environ, LDX_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    print(f"{'kernel':<20}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}  agree")
    for key in ("value_iteration", "batch_greedy", "run_lazygradient", "run_uniform", "run_qlearning"):
        a, b = fast[key], slow[key]
        payload = {k: v for k, v in a.items() if k != "seconds"}
        other = {k: v for k, v in b.items() if k != "seconds"}
        if key == "value_iteration":
            agree = max(abs(x - y) for x, y in zip(a["V"], b["V"])) < 1e-8
        else:
            agree = payload == other
        print(f"{key:<20}{a['seconds']:>12.4f}{b['seconds']:>12.4f}"
              f"{b['seconds'] / a['seconds']:>10.1f}  {agree}")


if __name__ == "__main__":
    main()
