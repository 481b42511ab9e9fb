"""Wall-clock comparison of the numba and pure-numpy kernel backends.

Usage: python benchmarks/bench_backends.py [--repeat N] [--quick]

Each kernel is called once per backend to warm up (numba compilation and
caches), then timed as the best of ``--repeat`` calls.  The script also checks
that both backends agree before reporting.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fisherkin import _backend, kernels
from fisherkin import boltzmann as bz
from fisherkin import landau as la
from fisherkin.grid import Distribution, make_grid, maxwellian


def cases(quick: bool):
    rng = np.random.default_rng(7)
    x = rng.standard_normal(10**5 if quick else 10**6)
    yield "pairwise_sum", (lambda: kernels.pairwise_sum(x)), "n=%d" % x.size

    nc = 10 if quick else 14
    gc = make_grid(3, nc, 5.0)
    fc = maxwellian(gc)
    yield "direct_convolve", (lambda: bz.power_convolution(fc, gc, 1.0, method="direct")), f"n={nc}^3"

    nq = 6 if quick else 8
    gq = make_grid(3, nq, 5.0)
    dq = Distribution(gq, maxwellian(gq))
    kernel = bz.KernelSpec.constant(1.0)
    yield "qplus_shift", (lambda: bz.qplus_direct(dq, dq, kernel)), f"n={nq}^3"

    nl = 24 if quick else 32
    gl = make_grid(3, nl, 8.0)
    dl = Distribution(gl, maxwellian(gl, 0.5, [1.0, 0, 0], 0.8) + maxwellian(gl, 0.5, [-1.0, 0, 0], 0.8))
    op = la.landau_fields(dl, 1.0).operator()
    yield "landau_apply", (lambda: op(dl.values)), f"n={nl}^3"


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args(argv)
    if not _backend.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    previous = _backend.backend()
    print(f"{'kernel':<16} {'size':<10} {'numba [s]':>11} {'numpy [s]':>11} {'speedup':>9}  agree")
    try:
        for name, fn, size in cases(args.quick):
            times, outs = {}, {}
            for backend in ("numba", "numpy"):
                _backend.set_backend(backend)
                outs[backend] = np.asarray(fn())
                times[backend] = best_of(fn, args.repeat)
            a, b = outs["numba"], outs["numpy"]
            agree = bool(np.allclose(a, b, rtol=1e-10, atol=1e-12 * float(np.max(np.abs(b)) or 1.0)))
            print(f"{name:<16} {size:<10} {times['numba']:11.4f} {times['numpy']:11.4f} "
                  f"{times['numpy'] / times['numba']:9.1f}  {agree}")
    finally:
        _backend.set_backend(previous)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
