"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Numba compile time is excluded (one warm-up call per kernel). Each row also
reports the max absolute difference between the two backends' outputs.
"""

import argparse
import json
import time

import numpy as np

from causalhsp import kernels


def cases(rng):
    n = 200
    X = rng.normal(size=(n, 6))
    D = kernels.numpy_impl.pairwise_euclidean(X)
    v = rng.normal(size=14) * 0.1 + 1 / 14
    lo, hi = np.full(14, 0.03), np.full(14, 0.10)
    A = rng.normal(size=(14, 14))
    M = A @ A.T / 14 + np.eye(14) * 0.1
    step = 1.0 / (2.0 * np.linalg.eigvalsh(M)[-1])
    Z = rng.standard_normal((500, 252))
    return {
        "pairwise_euclidean": (X,),
        "mst_edges": (D,),
        "project_capped_simplex": (v, lo, hi, 1.0),
        "pgd_qp": (M, np.zeros(14), lo, hi, np.full(14, 1 / 14), step, 5000, 1e-9),
        "euler_ou": (0.3, 2.0, np.full(252, 0.05), 0.1, 1 / 252, Z),
        "euler_local_vol": (0.3, 2.0, 0.1, 0.01, 1 / 252, Z),
    }


def best_time(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def first_array(out):
    return np.asarray(out[0] if isinstance(out, tuple) else out, float)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json")
    args = ap.parse_args()

    if kernels.numba_impl is None:
        print("numba unavailable (or CAUSALHSP_NO_NUMBA set): timing numpy only")
    rows = []
    for name, a in cases(np.random.default_rng(args.seed)).items():
        f_np = getattr(kernels.numpy_impl, name)
        row = {"kernel": name, "numpy_s": best_time(f_np, a, args.repeat)}
        if kernels.numba_impl is not None:
            f_nb = getattr(kernels.numba_impl, name)
            row["numba_s"] = best_time(f_nb, a, args.repeat)
            row["speedup"] = row["numpy_s"] / row["numba_s"]
            row["max_abs_diff"] = float(np.max(np.abs(first_array(f_np(*a)) - first_array(f_nb(*a)))))
        rows.append(row)

    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max|diff|':>12}")
    for r in rows:
        nb = f"{r['numba_s'] * 1e3:12.3f}{r['speedup']:10.1f}{r['max_abs_diff']:12.1e}" if "numba_s" in r else ""
        print(f"{r['kernel']:<24}{r['numpy_s'] * 1e3:12.3f}{nb}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
