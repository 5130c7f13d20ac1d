"""Hot per-element kernels, compiled with numba when available.

Set ``PXQLAP_NUMBA=0`` to force the pure-numpy path (the numba import is then
skipped entirely). ``use_numba=None`` picks the faster backend per kernel;
True or False forces one. Both paths compute the same quantities and are checked
against each other in the test suite; ``benchmarks/bench_kernels.py`` times them.
"""
import os

import numpy as np
from scipy.linalg import solve_banded

_WANT_NUMBA = os.environ.get("PXQLAP_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError
    from numba import njit
except ImportError:  # pragma: no cover - exercised via the env flag
    njit = None

HAVE_NUMBA = njit is not None


# -- numpy implementations ---------------------------------------------------


def flux_terms_np(gsq, p, eps):
    """Energy density, flux coefficient and curvature coefficient of (|g|^2+eps^2)^(p/2)/p.

    Returns ``(e, a, b)`` with e = q^(p/2)/p, a = q^((p-2)/2), b = (p-2) q^((p-4)/2),
    q = gsq + eps^2. The flux is ``a*g``; the Hessian in g is ``a*I + b*g g^T``.
    """
    q = gsq + eps * eps
    a = np.power(q, 0.5 * p - 1.0)
    e = a * q / p
    b = (p - 2.0) * a / q
    return e, a, b


def energy_delta_np(gsq, gsq_new, p, eps):
    """Stable difference of the energy density between two gradient states."""
    q = gsq + eps * eps
    dq = gsq_new - gsq
    return np.power(q, 0.5 * p) / p * np.expm1(0.5 * p * np.log1p(dq / q))


def tridiag_solve_np(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower[i]`` couples row i+1 to column i."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs, check_finite=False)


# -- numba implementations ---------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def flux_terms_nb(gsq, p, eps):
        n = gsq.size
        e = np.empty(n)
        a = np.empty(n)
        b = np.empty(n)
        e2 = eps * eps
        for i in range(n):
            q = gsq[i] + e2
            ai = q ** (0.5 * p[i] - 1.0)
            a[i] = ai
            e[i] = ai * q / p[i]
            b[i] = (p[i] - 2.0) * ai / q
        return e, a, b

    @njit(cache=True)
    def energy_delta_nb(gsq, gsq_new, p, eps):
        n = gsq.size
        out = np.empty(n)
        e2 = eps * eps
        for i in range(n):
            q = gsq[i] + e2
            out[i] = q ** (0.5 * p[i]) / p[i] * np.expm1(0.5 * p[i] * np.log1p((gsq_new[i] - gsq[i]) / q))
        return out

    @njit(cache=True)
    def tridiag_solve_nb(lower, diag, upper, rhs):
        # Thomas algorithm; the Hessians here are SPD so no pivoting is needed
        n = diag.size
        c = np.empty(n)
        x = np.empty(n)
        beta = diag[0]
        x[0] = rhs[0] / beta
        for i in range(1, n):
            c[i - 1] = upper[i - 1] / beta
            beta = diag[i] - lower[i - 1] * c[i - 1]
            x[i] = (rhs[i] - lower[i - 1] * x[i - 1]) / beta
        for i in range(n - 2, -1, -1):
            x[i] -= c[i] * x[i + 1]
        return x


def _as_arrays(gsq, p):
    gsq = np.ascontiguousarray(gsq, dtype=np.float64)
    p = np.ascontiguousarray(np.broadcast_to(p, gsq.shape), dtype=np.float64)
    return gsq, p


# Default backend per kernel, from benchmarks/bench_kernels.py: numpy's vectorized
# pow beats the scalar libm calls in a numba loop for the elementwise kernels,
# while the sequential Thomas sweep gains 2-3x from compilation.
_DEFAULT = {"flux_terms": False, "energy_delta": False, "tridiag_solve": True}


def _use(kernel, use_numba):
    if use_numba is None:
        use_numba = _DEFAULT[kernel]
    return bool(use_numba) and HAVE_NUMBA


def flux_terms(gsq, p, eps, use_numba=None):
    use = _use("flux_terms", use_numba)
    if use:
        gsq, p = _as_arrays(gsq, p)
        return flux_terms_nb(gsq, p, float(eps))
    return flux_terms_np(gsq, p, eps)


def energy_delta(gsq, gsq_new, p, eps, use_numba=None):
    use = _use("energy_delta", use_numba)
    if use:
        gsq, p = _as_arrays(gsq, p)
        gsq_new = np.ascontiguousarray(gsq_new, dtype=np.float64)
        return energy_delta_nb(gsq, gsq_new, p, float(eps))
    return energy_delta_np(gsq, gsq_new, p, eps)


def tridiag_solve(lower, diag, upper, rhs, use_numba=None):
    use = _use("tridiag_solve", use_numba)
    if use:
        return tridiag_solve_nb(
            np.ascontiguousarray(lower, dtype=np.float64),
            np.ascontiguousarray(diag, dtype=np.float64),
            np.ascontiguousarray(upper, dtype=np.float64),
            np.ascontiguousarray(rhs, dtype=np.float64),
        )
    return tridiag_solve_np(lower, diag, upper, rhs)
