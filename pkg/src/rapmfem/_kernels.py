"""Banded linear algebra used by the time steppers.

Matrices are stored row-centric, diagonal-major: ``band[k, i] = A[i, i - bw + k]``
for ``k = 0 .. 2*bw`` (sub-diagonals first, main diagonal at ``k = bw``).
Slots that fall outside the matrix must hold zero; every helper below
preserves that invariant.

The LU sweeps are sequential recurrences, so they are compiled with numba
when it is available.  Set ``RAPMFEM_DISABLE_NUMBA=1`` before import to run
the same code paths as plain Python/numpy (slower, handy for debugging and
for the jit-vs-pure benchmark in ``benchmarks/``).
"""

import os

import numpy as np

from .errors import LinearSolveFailure


def _jit_available():
    if os.environ.get("RAPMFEM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _jit_available()

if NUMBA_ENABLED:
    from numba import njit
else:
    def njit(*args, **kwargs):
        # identity decorator so the kernels run as plain Python
        def wrap(func):
            return func
        if args and callable(args[0]):
            return args[0]
        return wrap


PIVOT_TOL = 1e-14


def band_zeros(bw, n):
    return np.zeros((2 * bw + 1, n))


def band_from_dense(a, bw):
    n = a.shape[0]
    band = band_zeros(bw, n)
    for k in range(2 * bw + 1):
        s = k - bw
        for i in range(max(0, -s), min(n, n - s)):
            band[k, i] = a[i, i + s]
    return band


def band_to_dense(band, bw):
    n = band.shape[1]
    a = np.zeros((n, n))
    for k in range(2 * bw + 1):
        s = k - bw
        for i in range(max(0, -s), min(n, n - s)):
            a[i, i + s] = band[k, i]
    return a


def band_pad(band, bw, new_bw):
    """Embed a band of half-width bw into a wider one (zero-filled)."""
    if new_bw == bw:
        return band.copy()
    if new_bw < bw:
        raise ValueError("new_bw must be >= bw")
    out = band_zeros(new_bw, band.shape[1])
    out[new_bw - bw:new_bw + bw + 1] = band
    return out


def shifted(v, s):
    """Return w with w[i] = v[i+s], zero where i+s falls outside v."""
    n = v.shape[0]
    w = np.zeros_like(v)
    if s == 0:
        w[:] = v
    elif s > 0:
        if s < n:
            w[:n - s] = v[s:]
    elif -s < n:
        w[-s:] = v[:s]
    return w


def banded_matvec(band, bw, x):
    """y = A x for a banded A (vectorized over shifted diagonals)."""
    n = x.shape[0]
    y = np.zeros(n)
    for k in range(2 * bw + 1):
        s = k - bw
        if s == 0:
            y += band[k] * x
        elif s > 0:
            if s < n:
                y[:n - s] += band[k, :n - s] * x[s:]
        elif -s < n:
            y[-s:] += band[k, -s:] * x[:s]
    return y


def band_scale_rows(band, w):
    """diag(w) @ A in band form."""
    return band * w[np.newaxis, :]


def band_scale_cols(band, bw, w):
    """A @ diag(w) in band form."""
    out = np.empty_like(band)
    for k in range(2 * bw + 1):
        out[k] = band[k] * shifted(w, k - bw)
    return out


def band_mul(a, abw, b, bbw):
    """Product of two banded matrices; result half-width is abw + bbw."""
    cbw = abw + bbw
    c = band_zeros(cbw, a.shape[1])
    for da in range(-abw, abw + 1):
        arow = a[abw + da]
        for db in range(-bbw, bbw + 1):
            # C[i, i+da+db] += A[i, i+da] * B[i+da, (i+da)+db]
            c[cbw + da + db] += arow * shifted(b[bbw + db], da)
    return c


@njit(cache=True)
def _lu_factor(lu, bw):
    """In-place banded LU without pivoting.

    Multipliers overwrite the sub-diagonal slots.  Returns the smallest
    |pivot| / row-scale ratio seen; 0.0 flags an exactly zero pivot.
    """
    n = lu.shape[1]
    scale = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(2 * bw + 1):
            a = abs(lu[k, i])
            if a > s:
                s = a
        scale[i] = s if s > 0.0 else 1.0
    min_ratio = np.inf
    for i in range(n):
        piv = lu[bw, i]
        ratio = abs(piv) / scale[i]
        if ratio < min_ratio:
            min_ratio = ratio
        if piv == 0.0:
            return 0.0
        lim = bw if i + bw < n else n - 1 - i
        for l in range(1, lim + 1):
            r = i + l
            m = lu[bw - l, r] / piv
            lu[bw - l, r] = m
            for d in range(1, bw + 1):
                lu[bw + d - l, r] -= m * lu[bw + d, i]
    return min_ratio


@njit(cache=True)
def _lu_solve(lu, bw, rhs):
    n = rhs.shape[0]
    x = np.empty(n)
    for i in range(n):
        acc = rhs[i]
        lmax = bw if i >= bw else i
        for l in range(1, lmax + 1):
            acc -= lu[bw - l, i] * x[i - l]
        x[i] = acc
    for i in range(n - 1, -1, -1):
        acc = x[i]
        dmax = bw if i + bw < n else n - 1 - i
        for d in range(1, dmax + 1):
            acc -= lu[bw + d, i] * x[i + d]
        x[i] = acc / lu[bw, i]
    return x


def banded_factor(band, bw, context="banded system", diag_ratio=None):
    """Factor a banded matrix, raising LinearSolveFailure on a bad pivot."""
    lu = band.astype(float).copy()
    min_ratio = _lu_factor(lu, bw)
    if min_ratio < PIVOT_TOL:
        raise LinearSolveFailure(
            f"{context}: pivot ratio {min_ratio:.3e} below {PIVOT_TOL:.0e}"
            + (f" (dtau/dx^2 = {diag_ratio:.6g})" if diag_ratio is not None else ""),
            ratio=diag_ratio,
        )
    return lu


def banded_solve_factored(lu, bw, rhs):
    return _lu_solve(lu, bw, np.ascontiguousarray(rhs, dtype=float))


def banded_solve(band, bw, rhs, context="banded system", diag_ratio=None):
    lu = banded_factor(band, bw, context=context, diag_ratio=diag_ratio)
    return banded_solve_factored(lu, bw, rhs)
