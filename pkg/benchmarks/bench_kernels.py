"""Compare the numba and numpy kernel backends.

Times the batched dual solve (with gradients) and the radius query on unit-box
lattices, after one warm-up call per backend so JIT compilation is excluded.
Also reports the largest weight difference between the backends.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--sizes 0.1,0.05,0.025]
"""

import argparse
import math
import time

import numpy as np

from lmekit import kernels
from lmekit.geometry import Domain, generate_grid_points, lattice_probes
from lmekit.lme import LmeParams, evaluate


def best_of(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_case(dim, h, repeat):
    domain = Domain.unit_box(dim)
    P = generate_grid_points(domain, h, jitter=0.2, seed=0)
    X = lattice_probes(domain, h / 3, 2 * h)
    params = LmeParams(h=h)
    row = {"dim": dim, "h": h, "nodes": len(P), "probes": len(X)}
    weights = {}
    for name in kernels.available_backends():
        prev = kernels.set_backend(name)
        try:
            neighbors = P.query(X, params.radius)
            evaluate(X[:4], P, params)  # warm-up / JIT
            row[f"query_{name}"] = best_of(lambda: P.query(X, params.radius), repeat)
            row[f"solve_{name}"] = best_of(lambda: evaluate(X, P, params, neighbors=neighbors), repeat)
            weights[name] = evaluate(X, P, params, neighbors=neighbors).weights
        finally:
            kernels.set_backend(prev)
    if len(weights) == 2:
        row["max_weight_diff"] = float(np.max(np.abs(weights["numba"] - weights["numpy"])))
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sizes", default="0.1,0.05,0.025")
    ap.add_argument("--dims", default="1,2")
    args = ap.parse_args(argv)
    sizes = [float(s) for s in args.sizes.split(",")]
    dims = [int(d) for d in args.dims.split(",")]

    print(f"backends: {kernels.available_backends()}")
    header = f"{'d':>2} {'h':>7} {'nodes':>7} {'probes':>7} | {'solve numba':>11} {'solve numpy':>11} " \
             f"{'speedup':>7} | {'query numba':>11} {'query numpy':>11} | {'max |dw|':>9}"
    print(header)
    print("-" * len(header))
    for d in dims:
        for h in sizes:
            r = run_case(d, h, args.repeat)
            sn, sp = r.get("solve_numba", math.nan), r["solve_numpy"]
            print(f"{d:>2} {h:>7.4g} {r['nodes']:>7} {r['probes']:>7} | {sn:>10.4f}s {sp:>10.4f}s "
                  f"{sp / sn:>6.1f}x | {r.get('query_numba', math.nan):>10.4f}s {r['query_numpy']:>10.4f}s | "
                  f"{r.get('max_weight_diff', math.nan):>9.2e}")


if __name__ == "__main__":
    main()
