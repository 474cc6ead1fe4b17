"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--n 2000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from popdyn import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    shapes = np.sort(rng.random((n, 30)), axis=1)
    shapes /= shapes[:, -1:]
    centers = np.ascontiguousarray(shapes[rng.choice(n, 50, replace=False)])
    Xf = rng.normal(size=(n, 73))
    y = rng.integers(0, 5, n).astype(np.intp)
    rows = rng.integers(0, n, n).astype(np.intp)
    feats = np.sort(rng.choice(73, 8, replace=False)).astype(np.intp)
    m = min(n, 800)
    Z = rng.normal(size=(m, 6))
    K = np.exp(-((Z[:, None] - Z[None]) ** 2).sum(-1) / 6)
    target = np.log1p(np.exp(5 + Z[:, 0]))
    tree = (np.array([0, -1, -1], dtype=np.intp), np.array([0.0, 0, 0]),
            np.array([1, -1, -1], dtype=np.intp), np.array([2, -1, -1], dtype=np.intp))
    return {
        f"assign_nearest {n}x30 vs 50": lambda k: k.assign_nearest(shapes, centers),
        f"mean_shift_flat {min(n, 1000)}x30": lambda k: k.mean_shift_flat(
            shapes[:1000], 0.3, 300, 1e-6),
        f"best_split {n}x8 feats": lambda k: k.best_split(Xf, y, rows, feats, 5, 1),
        f"tree_apply {n} rows": lambda k: k.tree_apply(Xf, *tree),
        f"smo_solve {m} rows": lambda k: k.smo_solve(K, target, 10.0, 0.1, 1e-3, 1000 * m),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    backends = _kernels.backends()
    names = sorted(backends)
    print(f"default backend: {_kernels.BACKEND}")
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in names) + "   speedup")
    for label, fn in cases(args.n, np.random.default_rng(args.seed)).items():
        t = {b: best_of(lambda: fn(backends[b]), args.repeat) for b in names}
        speed = t["numpy"] / t["cython"] if "cython" in t else float("nan")
        print(f"{label:32s}" + "".join(f"{t[b]:11.4f}s" for b in names) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
