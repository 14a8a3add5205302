"""Compiled vs pure-numpy kernels.

Runs each hot kernel on a fixed workload in this process (numba path, if
available) and again in a subprocess with GBFBI_DISABLE_NUMBA=1, then prints
a table of best-of-N wall times and the max abs difference of the outputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def workloads():
    from gbfbi import kernels
    from gbfbi.manifold import ChartMetric

    chart = ChartMetric("conformal-bump", 1.0, amplitude=0.2, center=(0.3, 0.2), width=0.5)
    rng = np.random.default_rng(1)
    # ray fan: 64 base points x 65 normal offsets, state (x, v, A, A')
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    x0 = 0.3 * np.stack([np.cos(th), np.sin(th)], 1)
    v0 = np.stack([-np.sin(th), np.cos(th)], 1) * np.exp(-chart.phi(x0)[0])[:, None]
    stops = np.linspace(-0.5, 0.5, 65)
    C = rng.standard_normal((96, 32)) / (1.0 + np.arange(96))[:, None]
    u, v = rng.uniform(-1, 1, 200_000), rng.uniform(-1, 1, 200_000)
    t = np.linspace(0, 2 * np.pi, 3000)
    P = np.stack([np.cos(3 * t) * np.cos(t), np.cos(3 * t) * np.sin(t)], 1)
    V = rng.standard_normal((4000, 2)) * 0.3
    z0 = np.zeros(2)
    return {
        "rays_rk4": lambda k: k.rays_rk4(chart.code, chart.params, x0, v0, stops, 8),
        "cheb2d": lambda k: k.cheb2d(C, u, v),
        "close_pairs": lambda k: k.close_pairs(P, P, 0.01, True, 5),
        "flow_rk4": lambda k: k.flow_rk4(chart.code, chart.params, z0, V, 96),
    }, kernels


def measure(repeat):
    jobs, kernels = workloads()
    out = {"accelerated": bool(kernels.ACCELERATED), "kernels": {}}
    for name, fn in jobs.items():
        fn(kernels)                      # compile / warm caches
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            res = fn(kernels)
            best = min(best, time.perf_counter() - t0)
        arrs = res if isinstance(res, tuple) else (res,)
        out["kernels"][name] = {"seconds": best,
                                "checksum": [float(np.sum(np.abs(np.asarray(a, dtype=float)))) for a in arrs]}
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return 0
    fast = measure(args.repeat)
    env = dict(os.environ, GBFBI_DISABLE_NUMBA="1")
    proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                          env=env, capture_output=True, text=True, check=True)
    slow = json.loads(proc.stdout.strip().splitlines()[-1])
    if not fast["accelerated"]:
        print("numba unavailable: both columns are the numpy path")
    print(f"{'kernel':<12} {'numba [s]':>11} {'numpy [s]':>11} {'speedup':>8} {'checksum rel diff':>18}")
    for name, f in fast["kernels"].items():
        s = slow["kernels"][name]
        rel = max(abs(a - b) / max(abs(b), 1e-300) for a, b in zip(f["checksum"], s["checksum"]))
        print(f"{name:<12} {f['seconds']:>11.4f} {s['seconds']:>11.4f} {s['seconds'] / f['seconds']:>8.1f} {rel:>18.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": fast, "numpy": slow}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
