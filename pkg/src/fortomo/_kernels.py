"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

The numba path is the default whenever numba imports cleanly; set
``FORTOMO_DISABLE_NUMBA=1`` to force the numpy implementations. Both paths
share signatures and agree up to floating-point rounding;
``benchmarks/kernel_bench.py`` compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.linalg import solve_triangular

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and os.environ.get("FORTOMO_DISABLE_NUMBA", "0") in ("", "0")

FISTA_CONVERGED = 0
FISTA_MAX_ITER = 1
FISTA_DIVERGED = 2


def _c128(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# Hermitian quadratic forms  Re(a_i^H R a_i), one value per steering column.
# ---------------------------------------------------------------------------

def quadratic_forms_numpy(a, r):
    return np.einsum("mi,mi->i", a.conj(), r @ a).real


def _quadratic_forms_loop(a, r):
    n, nz = a.shape
    out = np.empty(nz, np.float64)
    for i in range(nz):
        acc = 0.0
        for m in range(n):
            s = 0.0 + 0.0j
            for k in range(n):
                s += r[m, k] * a[k, i]
            acc += (a[m, i].conjugate() * s).real
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# Whitened column norms  ||L^{-1} a_i||^2  for a lower-triangular Cholesky
# factor L. These are the Capon denominators a_i^H (L L^H)^{-1} a_i and are
# nonnegative by construction.
# ---------------------------------------------------------------------------

def whitened_norms_numpy(chol, a):
    x = solve_triangular(chol, a, lower=True, check_finite=False)
    return np.einsum("mi,mi->i", x.conj(), x).real


def _whitened_norms_loop(chol, a):
    n, nz = a.shape
    out = np.empty(nz, np.float64)
    x = np.empty(n, np.complex128)
    for i in range(nz):
        acc = 0.0
        for m in range(n):
            s = a[m, i]
            for k in range(m):
                s -= chol[m, k] * x[k]
            xm = s / chol[m, m]
            x[m] = xm
            acc += xm.real * xm.real + xm.imag * xm.imag
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# Monotone FISTA on the wavelet-coefficient quadratic
#     h(alpha) = alpha^T M alpha - 2 c^T alpha + const + lam * ||alpha||_1
# with restart on objective increase, so the recorded objective sequence is
# non-increasing by construction. One fresh mat-vec per iteration: M y is
# tracked as a linear combination of the cached M x / M cand products.
# ---------------------------------------------------------------------------

def _fista_quadratic_impl(m, c, const_term, lam, lstep, max_iter, rel_tol):
    n = c.shape[0]
    x = np.zeros(n, np.float64)
    mx = np.zeros(n, np.float64)
    hx = const_term
    y = x.copy()
    my = mx.copy()
    t = 1.0
    hist = np.empty(max_iter + 1, np.float64)
    hist[0] = hx
    n_hist = 1
    status = FISTA_MAX_ITER
    thr = lam / lstep
    for _ in range(max_iter):
        v = y - 2.0 * (my - c) / lstep
        cand = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
        mcand = np.dot(m, cand)
        hcand = (np.dot(cand, mcand) - 2.0 * np.dot(c, cand) + const_term
                 + lam * np.abs(cand).sum())
        if hcand > hx:
            # restart: plain proximal step from the last accepted iterate
            t = 1.0
            y = x.copy()
            my = mx.copy()
            v = y - 2.0 * (my - c) / lstep
            cand = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
            mcand = np.dot(m, cand)
            hcand = (np.dot(cand, mcand) - 2.0 * np.dot(c, cand) + const_term
                     + lam * np.abs(cand).sum())
            if hcand > hx:
                # round-off stall guard: keep the accepted iterate
                cand = x.copy()
                mcand = mx.copy()
                hcand = hx
        if not np.isfinite(hcand):
            hist[n_hist] = hcand
            n_hist += 1
            status = FISTA_DIVERGED
            break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        y = cand + beta * (cand - x)
        my = (1.0 + beta) * mcand - beta * mx
        x = cand
        mx = mcand
        t = t_next
        hist[n_hist] = hcand
        n_hist += 1
        if abs(hcand - hx) <= rel_tol * abs(hx) or hcand == hx:
            status = FISTA_CONVERGED
            break
        hx = hcand
    return x, hist, n_hist, status


fista_quadratic_numpy = _fista_quadratic_impl

if HAVE_NUMBA:
    quadratic_forms_numba = njit(cache=True)(_quadratic_forms_loop)
    whitened_norms_numba = njit(cache=True)(_whitened_norms_loop)
    fista_quadratic_numba = njit(cache=True)(_fista_quadratic_impl)


def quadratic_forms(a, r):
    """Re(a_i^H R a_i) for every column a_i of the N x N_z matrix `a`."""
    a = _c128(a)
    r = _c128(r)
    if NUMBA_ENABLED:
        return quadratic_forms_numba(a, r)
    return quadratic_forms_numpy(a, r)


def whitened_norms(chol, a):
    """||L^{-1} a_i||^2 per column, L lower triangular."""
    chol = _c128(chol)
    a = _c128(a)
    if NUMBA_ENABLED:
        return whitened_norms_numba(chol, a)
    return whitened_norms_numpy(chol, a)


def fista_quadratic(m, c, const_term, lam, lstep, max_iter, rel_tol):
    """Run monotone FISTA; returns (alpha, objective history, status)."""
    m = _f64(m)
    c = _f64(c)
    if NUMBA_ENABLED:
        x, hist, n_hist, status = fista_quadratic_numba(
            m, c, float(const_term), float(lam), float(lstep),
            int(max_iter), float(rel_tol))
    else:
        x, hist, n_hist, status = fista_quadratic_numpy(
            m, c, float(const_term), float(lam), float(lstep),
            int(max_iter), float(rel_tol))
    return x, hist[:n_hist], status
