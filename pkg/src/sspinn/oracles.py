"""Reference profiles and residual norm tables used for validation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, sparse
from scipy.sparse.linalg import spsolve

from . import kernels
from .field_model import Jet2


class OracleError(ArithmeticError):
    pass


class GridTooCoarse(ValueError):
    pass


# --------------------------------------------------------------------------
# Burgers


def burgers_implicit(y, lam, tol=1e-12):
    """Profile on the branch of ``y = -U - U^(1 + 1/lam)`` through ``U(-2) = 1``.

    Solved for ``y < 0`` and extended oddly.  Raises :class:`OracleError` if
    the defining relation is not met to ``tol`` (relative to ``1 + |y|``).
    """
    if not lam > 0:
        raise OracleError(f"lam must be positive, got {lam}")
    scalar = np.ndim(y) == 0
    yy = np.asarray(y, dtype=float).ravel()
    U = kernels.implicit_power_root(yy, lam)
    p = 1.0 + 1.0 / lam
    res = np.abs(yy + U + np.sign(U) * np.abs(U) ** p)
    bad = res > tol * (1.0 + np.abs(yy))
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise OracleError(f"no convergence at y={yy[k]}: bracket (0, {abs(yy[k])}), residual {res[k]:.3e}")
    return float(U[0]) if scalar else U.reshape(np.shape(y))


def burgers_implicit_jet(y, lam) -> Jet2:
    """Value and first two derivatives of :func:`burgers_implicit` by implicit differentiation."""
    y = np.asarray(y, dtype=float).ravel()
    U = burgers_implicit(y, lam)
    p = 1.0 + 1.0 / lam
    a = np.abs(U)
    D = 1.0 + p * a ** (p - 1.0)
    Uy = -1.0 / D
    with np.errstate(divide="ignore", invalid="ignore"):
        curv = np.where(a > 0, p * (p - 1.0) * a ** (p - 2.0), 0.0 if p > 2 else np.inf)
    Uyy = np.sign(U) * curv * Uy / D ** 2
    return Jet2(U, (Uy,), ((Uyy,),))


# --------------------------------------------------------------------------
# Constantin-Lax-Majda (a = 0)


CLM_LAMBDA = 0.0


def clm_exact(y):
    """``(Omega, U_y, lam)`` of the exact a = 0 profile with ``Omega'(0) = 2``."""
    y = np.asarray(y, dtype=float)
    q = 1.0 + y * y
    return 2.0 * y / q, -2.0 / q, CLM_LAMBDA


def clm_exact_jets(y):
    """Jets of ``Omega`` and ``U`` (``U = -2 arctan y``) plus ``(H Omega, (H Omega)')``."""
    y = np.asarray(y, dtype=float).ravel()
    q = 1.0 + y * y
    om = 2.0 * y / q
    om_y = 2.0 * (1.0 - y * y) / q ** 2
    om_yy = 4.0 * y * (y * y - 3.0) / q ** 3
    u = -2.0 * np.arctan(y)
    u_y = -2.0 / q
    u_yy = 4.0 * y / q ** 2
    jets = {"Omega": Jet2(om, (om_y,), ((om_yy,),)), "U": Jet2(u, (u_y,), ((u_yy,),))}
    return jets, (u_y, u_yy)


# --------------------------------------------------------------------------
# Chen-Hou approximate non-smooth profile


def chen_hou_constant(alpha):
    """``c = (2/pi) \\int_0^{pi/2} cos(t)^alpha sin(2t) dt`` (closed form ``4/(pi(alpha+2))``)."""
    val, _ = integrate.quad(lambda t: np.cos(t) ** alpha * np.sin(2.0 * t), 0.0, np.pi / 2,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2.0 / np.pi * val


@dataclass(frozen=True)
class ChenHouProfile:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def lam(self):
        return -1.0 + 1.0 / self.alpha

    @property
    def c(self):
        return chen_hou_constant(self.alpha)


def chen_hou_profile(y, alpha, c=None):
    """``(Omega, Phi, Psi)`` of the approximate profile at rows of ``y`` (odd in y1)."""
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    y1, y2 = Y[:, 0], Y[:, 1]
    c = chen_hou_constant(alpha) if c is None else c
    r2 = y1 * y1 + y2 * y2
    R = r2 ** (alpha / 2.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosg = np.where(r2 > 0, np.abs(y1) / np.sqrt(r2), 1.0)
    amp = alpha / c * cosg ** alpha * np.sign(y1)
    om = amp * 3.0 * R / (1.0 + R) ** 2
    ph = amp * 6.0 * R / (1.0 + R) ** 3
    ps = np.zeros_like(om)
    out = (om, ph, ps)
    if np.ndim(y) == 1:
        return tuple(float(v[0]) for v in out)
    return out


# --------------------------------------------------------------------------
# finite-difference jets on regular grids


def jets_from_grid(values, spacing):
    """Second-order finite-difference jets of gridded values.

    ``values`` has shape ``(n,)`` or ``(n1, n2)`` on a regular grid with the
    given per-axis ``spacing``.  Returns a :class:`Jet2` of flattened arrays.
    """
    values = np.asarray(values, dtype=float)
    d = values.ndim
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (d,))
    if min(values.shape) < 3:
        raise GridTooCoarse(f"need at least 3 points per axis for the 3-point stencil, got {values.shape}")
    first = np.gradient(values, *spacing, edge_order=2)
    if d == 1:
        first = [first]
    second = [[None] * d for _ in range(d)]
    for i in range(d):
        gi = np.gradient(first[i], *spacing, edge_order=2)
        if d == 1:
            gi = [gi]
        for j in range(d):
            second[i][j] = gi[j]
    for i in range(d):
        for j in range(i + 1, d):
            sym = 0.5 * (second[i][j] + second[j][i])
            second[i][j] = second[j][i] = sym
    flat = lambda a: a.ravel()
    return Jet2(flat(values), tuple(flat(g) for g in first),
                tuple(tuple(flat(second[i][j]) for j in range(d)) for i in range(d)))


def stream_velocity(omega, h, ):
    """Velocity ``(U1, U2)`` of gridded vorticity on the upper half-plane box.

    Solves ``Laplace psi = Omega`` with ``psi = 0`` on the box boundary
    (``y2 = 0`` is the wall) by a 5-point stencil; ``U = (d2 psi, -d1 psi)``.
    ``omega`` has shape ``(n1, n2)`` with axis 0 along ``y1``.
    """
    omega = np.asarray(omega, dtype=float)
    n1, n2 = omega.shape
    m1, m2 = n1 - 2, n2 - 2
    if m1 < 1 or m2 < 1:
        raise GridTooCoarse("need interior points for the Poisson solve")
    e1, e2 = np.ones(m1), np.ones(m2)
    D1 = sparse.diags([e1[:-1], -2 * e1, e1[:-1]], [-1, 0, 1]) / h ** 2
    D2 = sparse.diags([e2[:-1], -2 * e2, e2[:-1]], [-1, 0, 1]) / h ** 2
    lap = sparse.kron(D1, sparse.identity(m2)) + sparse.kron(sparse.identity(m1), D2)
    psi = np.zeros_like(omega)
    psi[1:-1, 1:-1] = spsolve(lap.tocsc(), omega[1:-1, 1:-1].ravel()).reshape(m1, m2)
    d1, d2 = np.gradient(psi, h, h, edge_order=2)
    return d2, -d1


# --------------------------------------------------------------------------
# residual tables


def _rms(a):
    a = np.asarray(a, dtype=float)
    return float(np.sqrt(np.mean(a * a))) if a.size else 0.0


def _sup(a):
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


def residual_report(problem, jets, scalars, Y, aux=None):
    """Per-equation RMS/sup residual norms next to field norms.

    ``jets`` maps field names to :class:`Jet2` of arrays at the points ``Y``
    (closed form, trained networks, or :func:`jets_from_grid`).  Returns a
    dict with ``equations`` (name -> rms, sup) and ``fields`` (name -> rms,
    sup) and ``ratio`` (max residual rms over max field rms).
    """
    bundle = problem.residuals(jets, scalars, Y, aux)
    eqs = {name: {"rms": _rms(v), "sup": _sup(v)} for name, v in zip(problem.equations, bundle.values)}
    fields = {name: {"rms": _rms(j.value), "sup": _sup(j.value)} for name, j in jets.items()}
    fmax = max((f["rms"] for f in fields.values()), default=0.0)
    rmax = max((e["rms"] for e in eqs.values()), default=0.0)
    ratio = rmax / fmax if fmax > 0 else (0.0 if rmax == 0 else np.inf)
    return {"equations": eqs, "fields": fields, "ratio": ratio}


def format_report(report):
    lines = [f"{'name':<10}{'rms':>14}{'sup':>14}"]
    for name, r in report["equations"].items():
        lines.append(f"{name:<10}{r['rms']:>14.4e}{r['sup']:>14.4e}")
    for name, r in report["fields"].items():
        lines.append(f"{name:<10}{r['rms']:>14.4e}{r['sup']:>14.4e}")
    lines.append(f"residual/field rms ratio: {report['ratio']:.3e}")
    return "\n".join(lines)
