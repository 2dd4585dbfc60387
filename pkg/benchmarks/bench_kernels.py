"""Compiled vs NumPy kernels: wall time per call and a bitwise agreement check.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import sys
import timeit

import numpy as np

from pmeflow import _kernels_py

try:
    from pmeflow import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def cases(rng):
    for n in (512, 4096):
        p = rng.random(n)
        yield f"psor 1d n={n}", "psor_sweep", (p, rng.standard_normal(n) * 1e-3, np.ones(n, np.uint8), 1.9, False), True
    for n in (64, 256):
        shape = (n, n)
        p = rng.random(shape)
        yield (f"psor 2d {n}^2", "psor_sweep",
               (p, rng.standard_normal(shape) * 1e-3, np.ones(shape, np.uint8), 1.9, False), True)
    for m in (10_000, 200_000):
        vals = rng.random((256, 256))
        pts = rng.uniform(-1, 1, (m, 2))
        yield f"interp 2d m={m}", "interp_linear", (vals, (-1.0, -1.0), 2 / 256, False, pts), False
        yield f"deposit 2d m={m}", "cic_deposit", ((256, 256), (-1.0, -1.0), 2 / 256, False, pts, rng.random(m)), False


def run(repeat):
    rng = np.random.default_rng(0)
    impls = [_kernels_py] + ([_kernels_c] if _kernels_c is not None else [])
    rows = []
    for label, fn, args, inplace in cases(rng):
        row = {"case": label}
        outs = []
        for impl in impls:
            def call():
                a = (args[0].copy(),) + args[1:] if inplace else args
                return getattr(impl, fn)(*a), a[0]
            n, total = timeit.Timer(call).autorange()
            best = min(timeit.Timer(call).repeat(repeat, n)) / n
            row[impl.BACKEND] = best
            res, arr = call()
            outs.append(arr if inplace else res)
        if len(outs) == 2:
            row["speedup"] = row["python"] / row["cython"]
            row["identical"] = bool(np.array_equal(outs[0], outs[1]))
        rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; timing the NumPy backend only", file=sys.stderr)
    rows = run(args.repeat)
    print(f"{'case':24s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s} {'identical':>9s}")
    for r in rows:
        cy = f"{1e3 * r['cython']:12.3f}" if "cython" in r else f"{'-':>12s}"
        sp = f"{r['speedup']:8.1f}" if "speedup" in r else f"{'-':>8s}"
        same = str(r.get("identical", "-"))
        print(f"{r['case']:24s} {1e3 * r['python']:12.3f} {cy} {sp} {same:>9s}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
