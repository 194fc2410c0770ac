"""Hot elementwise kernels with a numba path and a pure-numpy fallback.

Set ``SSPINN_NO_NUMBA=1`` to force the numpy implementations (useful for
debugging and for benchmarking the two paths against each other).  Both
paths perform the same floating point operations in the same order per
element, so results agree bitwise on one platform.

Jet layout used throughout: an array ``X`` of shape ``(C, N, h)`` where
channel 0 is the value, channels ``1..d`` the first derivatives and the
remaining ``d(d+1)/2`` channels the upper-triangular second derivatives in
the order given by :func:`hess_pairs`.
"""
import os

import numpy as np

_DISABLED = os.environ.get("SSPINN_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised by the env flag
    HAVE_NUMBA = False

# process-wide default for ``use_numba=None``; benchmarks flip it at runtime
USE_NUMBA = HAVE_NUMBA


def _pick(use_numba):
    return HAVE_NUMBA and (USE_NUMBA if use_numba is None else bool(use_numba))


def hess_pairs(d):
    """Upper-triangular index pairs ``(i, j)``, ``i <= j``, for dimension ``d``."""
    return [(i, j) for i in range(d) for j in range(i, d)]


def _pair_arrays(d):
    pairs = hess_pairs(d)
    pi = np.array([p[0] for p in pairs], dtype=np.int64)
    pj = np.array([p[1] for p in pairs], dtype=np.int64)
    return pi, pj


# --------------------------------------------------------------------------
# numpy reference path


def _tanh_jet_forward_np(Z, d, pi, pj):
    T = np.tanh(Z[0])
    T1 = 1.0 - T * T
    T2 = -2.0 * T * T1
    out = np.empty_like(Z)
    out[0] = T
    for i in range(d):
        out[1 + i] = T1 * Z[1 + i]
    for q in range(pi.shape[0]):
        out[1 + d + q] = T2 * Z[1 + pi[q]] * Z[1 + pj[q]] + T1 * Z[1 + d + q]
    return out


def _tanh_jet_backward_np(Z, Gout, d, pi, pj):
    T = np.tanh(Z[0])
    T1 = 1.0 - T * T
    T2 = -2.0 * T * T1
    T3 = -2.0 * T1 * T1 + 4.0 * T * T * T1
    Gz = np.empty_like(Z)
    acc0 = Gout[0] * T1
    for i in range(d):
        acc0 = acc0 + Gout[1 + i] * T2 * Z[1 + i]
    for q in range(pi.shape[0]):
        acc0 = acc0 + Gout[1 + d + q] * (T3 * Z[1 + pi[q]] * Z[1 + pj[q]] + T2 * Z[1 + d + q])
    Gz[0] = acc0
    for i in range(d):
        acc = Gout[1 + i] * T1
        for q in range(pi.shape[0]):
            if pi[q] == i:
                acc = acc + Gout[1 + d + q] * T2 * Z[1 + pj[q]]
            if pj[q] == i:
                acc = acc + Gout[1 + d + q] * T2 * Z[1 + pi[q]]
        Gz[1 + i] = acc
    for q in range(pi.shape[0]):
        Gz[1 + d + q] = Gout[1 + d + q] * T1
    return Gz


def _implicit_root_np(y, lam, tol, maxiter):
    p = 1.0 + 1.0 / lam
    out = np.zeros_like(y)
    for k in range(y.shape[0]):
        out[k] = _root_scalar(y[k], p, tol, maxiter)
    return out


def _root_scalar(y, p, tol, maxiter):
    # root of U + U**p + |y| = 0 ... written for s = -|y| <= 0, U >= 0
    if y == 0.0:
        return 0.0
    s = -abs(y)
    lo = 0.0
    hi = -s
    u = min(hi, (-s) ** (1.0 / p))
    for _ in range(maxiter):
        g = u + u ** p + s
        if g > 0.0:
            hi = u
        else:
            lo = u
        if abs(g) <= tol * (1.0 - s):
            break
        dg = 1.0 + p * u ** (p - 1.0)
        un = u - g / dg
        if not (lo < un < hi):
            un = 0.5 * (lo + hi)
        if un == u:
            break
        u = un
    return u if y < 0.0 else -u


# --------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _tanh_jet_forward_nb(Z, T, d, pi, pj):
        C, N, h = Z.shape
        out = np.empty_like(Z)
        npair = pi.shape[0]
        for n in range(N):
            for k in range(h):
                t = T[n, k]
                t1 = 1.0 - t * t
                t2 = -2.0 * t * t1
                out[0, n, k] = t
                for i in range(d):
                    out[1 + i, n, k] = t1 * Z[1 + i, n, k]
                for q in range(npair):
                    out[1 + d + q, n, k] = (t2 * Z[1 + pi[q], n, k] * Z[1 + pj[q], n, k]
                                            + t1 * Z[1 + d + q, n, k])
        return out

    @njit(cache=True)
    def _tanh_jet_backward_nb(Z, T, Gout, d, pi, pj):
        C, N, h = Z.shape
        Gz = np.empty_like(Z)
        npair = pi.shape[0]
        for n in range(N):
            for k in range(h):
                t = T[n, k]
                t1 = 1.0 - t * t
                t2 = -2.0 * t * t1
                t3 = -2.0 * t1 * t1 + 4.0 * t * t * t1
                acc0 = Gout[0, n, k] * t1
                for i in range(d):
                    acc0 = acc0 + Gout[1 + i, n, k] * t2 * Z[1 + i, n, k]
                for q in range(npair):
                    acc0 = acc0 + Gout[1 + d + q, n, k] * (
                        t3 * Z[1 + pi[q], n, k] * Z[1 + pj[q], n, k] + t2 * Z[1 + d + q, n, k])
                Gz[0, n, k] = acc0
                for i in range(d):
                    acc = Gout[1 + i, n, k] * t1
                    for q in range(npair):
                        if pi[q] == i:
                            acc = acc + Gout[1 + d + q, n, k] * t2 * Z[1 + pj[q], n, k]
                        if pj[q] == i:
                            acc = acc + Gout[1 + d + q, n, k] * t2 * Z[1 + pi[q], n, k]
                    Gz[1 + i, n, k] = acc
                for q in range(npair):
                    Gz[1 + d + q, n, k] = Gout[1 + d + q, n, k] * t1
        return Gz

    _root_scalar_nb = njit(cache=True)(_root_scalar)

    @njit(cache=True)
    def _implicit_root_nb(y, lam, tol, maxiter):
        p = 1.0 + 1.0 / lam
        out = np.zeros_like(y)
        for k in range(y.shape[0]):
            out[k] = _root_scalar_nb(y[k], p, tol, maxiter)
        return out


# --------------------------------------------------------------------------
# dispatch


def tanh_jet_forward(Z, d, use_numba=None):
    """Push a stacked jet through ``tanh`` elementwise."""
    pi, pj = _pair_arrays(d)
    if _pick(use_numba):
        # vectorized tanh from numpy beats a scalar libm call inside the loop
        return _tanh_jet_forward_nb(Z, np.tanh(Z[0]), d, pi, pj)
    return _tanh_jet_forward_np(Z, d, pi, pj)


def tanh_jet_backward(Z, Gout, d, use_numba=None):
    """Adjoint of :func:`tanh_jet_forward` with respect to the pre-activation jet ``Z``."""
    pi, pj = _pair_arrays(d)
    if _pick(use_numba):
        return _tanh_jet_backward_nb(Z, np.tanh(Z[0]), Gout, d, pi, pj)
    return _tanh_jet_backward_np(Z, Gout, d, pi, pj)


def implicit_power_root(y, lam, tol=1e-15, maxiter=200, use_numba=None):
    """Solve ``y = -U - sign(U)|U|**(1 + 1/lam)`` for ``U`` on the odd branch.

    Safeguarded Newton iteration inside a shrinking bisection bracket.
    """
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if _pick(use_numba):
        return _implicit_root_nb(y, float(lam), float(tol), int(maxiter))
    return _implicit_root_np(y, float(lam), float(tol), int(maxiter))
