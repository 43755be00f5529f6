"""Compiled vs numpy scan kernels: forward and forward+backward wall time.

    python benchmarks/bench_scan_backends.py --lengths 1024 4096 16384
"""
import argparse
import time

import numpy as np

from xssm import scan
from xssm.numerics import Tape, Tensor, no_grad, ops


def timed(fn, repeats):
    fn()
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(out))


def bench(L, d_inner, d_state, repeats, dtype):
    rng = np.random.default_rng(0)
    leaves = [Tensor(a.astype(dtype), requires_grad=True) for a in (
        rng.standard_normal((1, L, d_inner)),
        rng.uniform(0.01, 0.5, (1, L, d_inner)),
        -rng.uniform(0.5, 4.0, (d_inner, d_state)),
        rng.standard_normal((1, L, d_state)),
        rng.standard_normal((1, L, d_state)),
        rng.standard_normal(d_inner))]

    def fwd():
        with no_grad():
            scan.ssm_scan(*leaves)

    def fwd_bwd():
        with Tape() as tape:
            loss = ops.sum(scan.ssm_scan(*leaves))
        tape.backward(loss)

    return timed(fwd, repeats), timed(fwd_bwd, repeats)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", type=int, nargs="+", default=[1024, 4096, 16384])
    ap.add_argument("--d-inner", type=int, default=32)
    ap.add_argument("--d-state", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--float64", action="store_true")
    args = ap.parse_args()
    dtype = np.float64 if args.float64 else np.float32
    backends = scan.available_backends()
    if "cython" not in backends:
        print("# compiled kernel not built; only the numpy fallback is timed")
    print("L,backend,forward_ms,forward_backward_ms")
    results = {}
    for L in args.lengths:
        for name in backends:
            scan.set_backend(name)
            results[L, name] = bench(L, args.d_inner, args.d_state, args.repeats, dtype)
            print(f"{L},{name},{results[L, name][0]:.2f},{results[L, name][1]:.2f}")
    if "cython" in backends:
        for L in args.lengths:
            f = results[L, "numpy"][0] / results[L, "cython"][0]
            b = results[L, "numpy"][1] / results[L, "cython"][1]
            print(f"# L={L}: compiled speedup {f:.1f}x forward, {b:.1f}x forward+backward")


if __name__ == "__main__":
    main()
