"""Hot numeric kernels: batched B-spline basis/derivative evaluation.

Two interchangeable implementations are provided: a numba-jitted per-point
loop and a pure-numpy version vectorized over the evaluation points. The
environment variable ``TRIMIGA_NUMBA`` selects the default path (set it to
``0`` to force the numpy fallback); both stay importable so they can be
benchmarked against each other (``python -m trimiga.benchmark``).
"""

import os

import numpy as np

NUMBA_REQUESTED = os.environ.get("TRIMIGA_NUMBA", "1").lower() not in ("0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA


def find_spans(knots, degree, x):
    """Knot span indices i with knots[i] <= x < knots[i+1].

    x == knots[-1] is clamped to the last nonempty span (left-limit
    convention at the right end of the domain).
    """
    x = np.asarray(x, dtype=float)
    n = knots.shape[0] - degree - 1
    spans = np.searchsorted(knots, x, side="right") - 1
    return np.clip(spans, degree, n - 1).astype(np.int64)


def _basis_ders_numpy(knots, degree, x, spans, nders):
    """All nonzero basis functions and derivatives, vectorized over points.

    Returns an array of shape (npts, nders+1, degree+1); row k holds the
    k-th derivatives of the degree+1 B-splines nonzero on each point's span.
    Port of the classic triangular-table algorithm with the point loop
    replaced by array operations.
    """
    p = degree
    npts = x.shape[0]
    ndu = np.empty((npts, p + 1, p + 1))
    left = np.empty((npts, p + 1))
    right = np.empty((npts, p + 1))
    ndu[:, 0, 0] = 1.0
    for j in range(1, p + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            # lower triangle: knot differences; upper: basis values
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, nders + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    ne = min(nders, p)
    if ne > 0:
        a = np.zeros((npts, 2, p + 1))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[:, 0, :] = 0.0
            a[:, 0, 0] = 1.0
            for k in range(1, ne + 1):
                d = np.zeros(npts)
                rk = r - k
                pk = p - k
                if r >= k:
                    a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                    d = a[:, s2, 0] * ndu[:, rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                    d = d + a[:, s2, j] * ndu[:, rk + j, pk]
                if r <= pk:
                    a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                    d = d + a[:, s2, k] * ndu[:, r, pk]
                ders[:, k, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for k in range(1, ne + 1):
            ders[:, k, :] *= fac
            fac *= p - k
    return ders


def _basis_ders_loop(knots, degree, x, spans, nders, ders):
    """Per-point triangular-table evaluation (numba-compilable body)."""
    p = degree
    npts = x.shape[0]
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    a = np.empty((2, p + 1))
    ne = min(nders, p)
    for ip in range(npts):
        xx = x[ip]
        span = spans[ip]
        ndu[0, 0] = 1.0
        for j in range(1, p + 1):
            left[j] = xx - knots[span + 1 - j]
            right[j] = knots[span + j] - xx
            saved = 0.0
            for r in range(j):
                ndu[j, r] = right[r + 1] + left[j - r]
                temp = ndu[r, j - 1] / ndu[j, r]
                ndu[r, j] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            ndu[j, j] = saved
        for j in range(p + 1):
            ders[ip, 0, j] = ndu[j, p]
        for r in range(p + 1):
            s1 = 0
            s2 = 1
            for j in range(p + 1):
                a[0, j] = 0.0
            a[0, 0] = 1.0
            for k in range(1, ne + 1):
                d = 0.0
                rk = r - k
                pk = p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d += a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d += a[s2, k] * ndu[r, pk]
                ders[ip, k, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for k in range(1, ne + 1):
            for j in range(p + 1):
                ders[ip, k, j] *= fac
            fac *= p - k


if HAVE_NUMBA:
    _basis_ders_loop_jit = numba.njit(cache=True)(_basis_ders_loop)


def _basis_ders_numba(knots, degree, x, spans, nders):
    ders = np.zeros((x.shape[0], nders + 1, degree + 1))
    _basis_ders_loop_jit(knots, degree, x, spans, nders, ders)
    return ders


def basis_ders(knots, degree, x, nders, spans=None):
    """Values and derivatives of all B-splines nonzero at the points ``x``.

    Returns (spans, ders) where ders[ip, k, j] is the k-th derivative of
    basis function spans[ip]-degree+j at x[ip]. Rows k > degree are zero.
    """
    x = np.ascontiguousarray(x, dtype=float)
    knots = np.ascontiguousarray(knots, dtype=float)
    if spans is None:
        spans = find_spans(knots, degree, x)
    else:
        spans = np.ascontiguousarray(spans, dtype=np.int64)
    if USE_NUMBA:
        return spans, _basis_ders_numba(knots, degree, x, spans, nders)
    return spans, _basis_ders_numpy(knots, degree, x, spans, nders)
