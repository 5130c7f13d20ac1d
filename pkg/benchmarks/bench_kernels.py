"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--sizes 1025 16385 262145] [--repeat 20]

Each kernel is run once first so JIT compilation is excluded. A full 1D solve
with each backend is timed at the end. Agreement of the two backends is
checked before timing.
"""
import argparse
import time

import numpy as np

from pxqlap import _accel
from pxqlap.grid import Domain, build_grid
from pxqlap.plap import PlapProblem, SolverConfig, solve_dirichlet


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernels(n, rng):
    gsq = rng.random(n) ** 2
    gnew = gsq + 1e-3 * rng.standard_normal(n) ** 2
    p = 1.5 + rng.random(n)
    diag = 4.0 + rng.random(n)
    off = -rng.random(n - 1)
    rhs = rng.standard_normal(n)
    return {
        "flux_terms": (lambda nb: _accel.flux_terms(gsq, p, 1e-8, nb)),
        "energy_delta": (lambda nb: _accel.energy_delta(gsq, gnew, p, 1e-8, nb)),
        "tridiag_solve": (lambda nb: _accel.tridiag_solve(off, diag, off, rhs, nb)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[1025, 16385, 262145])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba unavailable (or PXQLAP_NUMBA=0); only the numpy path can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<15}{'n':>9}{'numpy [ms]':>13}{'numba [ms]':>13}{'speedup':>10}")
    for n in args.sizes:
        for name, fn in kernels(n, rng).items():
            ref = fn(False)
            t_np = best_of(lambda: fn(False), args.repeat)
            if _accel.HAVE_NUMBA:
                got = fn(True)
                for a, b in zip(np.atleast_2d(ref), np.atleast_2d(got)):
                    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-13)
                t_nb = best_of(lambda: fn(True), args.repeat)
                print(f"{name:<15}{n:>9}{1e3 * t_np:>13.3f}{1e3 * t_nb:>13.3f}{t_np / t_nb:>10.2f}")
            else:
                print(f"{name:<15}{n:>9}{1e3 * t_np:>13.3f}{'-':>13}{'-':>10}")

    grid = build_grid(Domain.interval(0, 1), 4097)
    prob = PlapProblem(grid, "2.5 + 0.2*sin(pi*x)", rhs=1.0)
    modes = {"numpy": False, "numba": True, "default": None} if _accel.HAVE_NUMBA else {"numpy": False}
    parts = []
    for label, nb in modes.items():
        cfg = SolverConfig(use_numba=nb)
        solve_dirichlet(prob, cfg)
        parts.append(f"{label} {1e3 * best_of(lambda: solve_dirichlet(prob, cfg), 5):.1f} ms")
    print("full solve n=4097: " + ", ".join(parts))


if __name__ == "__main__":
    main()
