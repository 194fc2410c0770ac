"""Hilbert transform on the real line by principal-value quadrature.

Convention: ``H f(x) = (1/pi) p.v. \\int f(t) / (x - t) dt``, so that
``H[1/(1+t^2)] = x/(1+x^2)`` and ``H[t/(1+t^2)] = -1/(1+x^2)``.

The singular part is removed by subtracting ``f(x)`` under the integral and
adding back the closed-form principal value of ``1/(x - t)`` over
``[-L, L]``.  Beyond ``[-L, L]`` the integrand is modelled as
``c_+- |t|^-p``, with ``c_+-`` read off the outermost nodes; that tail
integral has a hypergeometric closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import hyp2f1

from .field_model import ConfigurationError

_ORDERS = (10, 8, 6, 5, 4, 3, 2)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    L: float
    tail_exponent: float | None = None
    panel: int | None = None  # nodes per Gauss-Legendre panel


def build_grid(L: float, n: int, tail_exponent: float | None = None, stretch: float = 0.0) -> QuadratureGrid:
    """Composite Gauss-Legendre rule with ``n`` nodes on ``[-L, L]``.

    The half-interval ``[0, L]`` is split into panels with edges
    ``L sinh(stretch k/K) / sinh(stretch)`` (uniform for ``stretch=0``) and
    mirrored, so the rule is exactly symmetric.
    """
    if not (L > 0 and np.isfinite(L)):
        raise ConfigurationError(f"half-width must be positive, got {L}")
    if n < 16 or n % 2:
        raise ConfigurationError(f"need an even number of nodes >= 16, got {n}")
    half = n // 2
    order = next(o for o in _ORDERS if half % o == 0)
    K = half // order
    k = np.arange(K + 1) / K
    edges = L * (np.sinh(stretch * k) / np.sinh(stretch) if stretch > 0 else k)
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    pos = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wpos = (0.5 * (b - a) * w).ravel()
    nodes = np.concatenate([-pos[::-1], pos])
    weights = np.concatenate([wpos[::-1], wpos])
    return QuadratureGrid(nodes, weights, float(L), tail_exponent, order)


def _panel_derivative_row(nodes, j, panel):
    """Weights ``D`` with ``f'(nodes[j]) ~ D @ f(nodes[lo:lo + panel])`` (Lagrange interpolant)."""
    lo = (j // panel) * panel
    x = nodes[lo:lo + panel]
    i = j - lo
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    c = 1.0 / np.prod(dx, axis=1)
    row = np.zeros(panel)
    for k in range(panel):
        if k != i:
            row[k] = (c[k] / c[i]) / (x[i] - x[k])
    row[i] = -row.sum()
    return lo, row


def _tail_kernels(x, L, p):
    """Tail integrals per unit amplitude.

    Returns ``(right, left)`` with ``right = \\int_L^inf t^-p/(x-t) dt`` and
    ``left = \\int_L^inf u^-p/(x+u) du`` (the ``t < -L`` side after ``t=-u``).
    """
    right = -L ** (-p) / p * hyp2f1(1.0, p, p + 1.0, x / L)
    left = L ** (-p) / p * hyp2f1(1.0, p, p + 1.0, -x / L)
    return right, left


def hilbert_operator(grid: QuadratureGrid, xs, tail_exponent=None, exclude_tol=1e-12):
    """Linear operator ``(A, B)`` with ``H f(x_i) = A[i] @ f(nodes) + B[i] f(x_i)``.

    ``tail_exponent`` overrides the grid's (pass ``p + 1`` when applying the
    operator to a derivative whose parent decays like ``|t|^-p``).
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    L = grid.L
    if not np.all(np.abs(xs) < L):
        raise DomainError(f"evaluation points must lie in (-{L}, {L})")
    t, w = grid.nodes, grid.weights
    diff = xs[:, None] - t[None, :]
    close = np.abs(diff) <= exclude_tol * (1.0 + np.abs(xs[:, None]))
    safe = np.where(close, 1.0, diff)
    A = np.where(close, 0.0, w[None, :] / safe)
    B = np.log((L + xs) / (L - xs)) - A.sum(axis=1)
    if grid.panel:
        # on a node the subtracted integrand tends to -f'(x); differentiate the panel interpolant
        for i, j in zip(*np.nonzero(close)):
            lo, row = _panel_derivative_row(t, j, grid.panel)
            A[i, lo:lo + grid.panel] -= w[j] * row
    p = grid.tail_exponent if tail_exponent is None else tail_exponent
    if p is not None and np.isfinite(p):
        right, left = _tail_kernels(xs, L, p)
        A[:, -1] += right * abs(t[-1]) ** p
        A[:, 0] += left * abs(t[0]) ** p
    return A / np.pi, B / np.pi


def hilbert_at(f, grid: QuadratureGrid, x) -> float | np.ndarray:
    """``H f`` at ``x`` (scalar or array) for a vectorized callable ``f``."""
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    A, B = hilbert_operator(grid, xs)
    out = A @ np.asarray(f(grid.nodes), dtype=float) + B * np.asarray(f(xs), dtype=float)
    return float(out[0]) if scalar else out


def integrate(f, grid: QuadratureGrid) -> float:
    """Plain quadrature of ``f`` over ``[-L, L]``."""
    return float(np.dot(grid.weights, f(grid.nodes)))
