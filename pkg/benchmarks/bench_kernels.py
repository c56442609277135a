"""Time the Cython kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 360] [--p 0.15] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from angsync.kernels import backends
from angsync.synth import SyntheticConfig, gen_offset_graph


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=360)
    ap.add_argument("--p", type=float, default=0.15)
    ap.add_argument("--grid", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    g, gt = gen_offset_graph(SyntheticConfig(n=args.n, p=args.p, eta=0.2, seed=0))
    und = np.ascontiguousarray(g.undirected_mask().astype(np.uint8))
    # both orientations present so the directed kernel has work to do
    rng = np.random.default_rng(0)
    dirm = np.ascontiguousarray((rng.random((args.n, args.n)) < args.p).astype(np.uint8))
    np.fill_diagonal(dirm, 0)
    delta = np.ascontiguousarray(rng.uniform(0, 2 * np.pi, args.n))
    grid = np.linspace(0, 2 * np.pi, args.grid, endpoint=False)

    cases = {
        "triangles_undirected": lambda m: m.triangles_undirected(und),
        "triangles_directed": lambda m: m.triangles_directed(dirm),
        "wrapped_sq_grid": lambda m: m.wrapped_sq_grid(delta, grid),
    }
    impls = backends()
    print(f"n={args.n} p={args.p} grid={args.grid} backends={sorted(impls)}")
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in sorted(impls)) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for b, mod in sorted(impls.items()):
            fn(mod)  # warm-up
            times[b] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{name:<22}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in sorted(impls))
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
