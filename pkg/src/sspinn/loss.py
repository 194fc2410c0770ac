"""Condition, equation and residual-gradient losses and the weighted total."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, matvec, mean, square, value_of
from .field_model import ConfigurationError, ParameterLayout
from .hilbert import build_grid, hilbert_operator
from .problems import ProblemSpec
from .sampling import CollocationSet

DEFAULT_GAMMA = 0.1


@dataclass
class LossBreakdown:
    loss_c: np.ndarray
    loss_f: np.ndarray
    loss_df: np.ndarray
    gamma: float
    total: float
    weights: tuple = None  # (w_c, w_f, w_df) arrays, None means all ones

    def combine(self):
        return combine(self.loss_c, self.loss_f, self.loss_df, self.gamma, self.weights)

    def check(self, rtol=1e-14):
        expected = self.combine()
        if abs(expected - self.total) > rtol * max(1.0, abs(expected)):
            raise AssertionError(f"total {self.total!r} != recombined {expected!r}")
        if min(self.loss_c.min(initial=0), self.loss_f.min(initial=0), self.loss_df.min(initial=0)) < 0:
            raise AssertionError("negative loss component")
        return True

    def as_row(self):
        return [*self.loss_c, *self.loss_f, *self.loss_df, self.total]


def combine(loss_c, loss_f, loss_df, gamma, weights=None):
    """``mean_j(w_c loss_c) + gamma (mean_k(w_f loss_f) + mean_k(w_df loss_df))``."""
    n_b, n_e = len(loss_c), len(loss_f)
    w_c, w_f, w_df = weights if weights is not None else (1.0, 1.0, 1.0)
    tc = sum(w * l for w, l in zip(np.broadcast_to(w_c, (n_b,)), loss_c)) / n_b if n_b else 0.0
    tf = sum(w * l for w, l in zip(np.broadcast_to(w_f, (n_e,)), loss_f)) / n_e
    tdf = sum(w * l for w, l in zip(np.broadcast_to(w_df, (n_e,)), loss_df)) / n_e
    return tc + gamma * (tf + tdf)


def _mean_sq(components):
    acc = None
    for c in components:
        s = square(c)
        acc = s if acc is None else acc + s
    return mean(acc)


class LossAssembler:
    """Evaluates every loss term of one problem on a fixed collocation set.

    Works on a plain parameter vector (numbers out) or on a
    :class:`~sspinn.autodiff.Var` (differentiable terms out).
    """

    def __init__(self, problem: ProblemSpec, layout: ParameterLayout, collocation: CollocationSet,
                 gamma: float = DEFAULT_GAMMA, weights=None):
        self.problem = problem
        self.layout = layout
        self.collocation = collocation
        self.gamma = float(gamma)
        if weights is not None:
            w_c, w_f, w_df = (np.broadcast_to(np.asarray(w, dtype=float), (n,)).copy()
                              for w, n in zip(weights, (problem.n_b, problem.n_e, problem.n_e)))
            weights = (w_c, w_f, w_df)
        self.weights = weights
        for c in problem.constraints:
            if len(collocation.boundary.get(c.id, ())) == 0:
                raise ConfigurationError(f"no points for constraint {c.id}")
        self._hilbert = None
        if problem.hilbert is not None:
            self._hilbert = self._prepare_hilbert(collocation.interior)

    def _prepare_hilbert(self, Y):
        h = self.problem.hilbert
        grid = build_grid(h["L"], h["n"], h["tail_exponent"], h.get("stretch", 0.0))
        x = np.asarray(Y, dtype=float).reshape(-1)
        A, B = hilbert_operator(grid, x)
        p = h["tail_exponent"]
        A1, B1 = hilbert_operator(grid, x, None if p is None else p + 1.0)
        return {"grid": grid, "A": A, "B": B, "A1": A1, "B1": B1, "field": h["field"]}

    def hilbert_terms(self, theta, jets, Y=None):
        """``(H[f], d/dy H[f])`` at the interior points (or at ``Y``)."""
        hp = self._hilbert if Y is None else self._prepare_hilbert(Y)
        gj = self.layout.jets(theta, hp["field"], hp["grid"].nodes[:, None])
        own = jets[hp["field"]]
        H = matvec(hp["A"], gj.value) + own.value * hp["B"]
        dH = matvec(hp["A1"], gj.grad[0]) + own.grad[0] * hp["B1"]
        return H, dH

    def interior_residuals(self, theta, Y=None):
        Y = self.collocation.interior if Y is None else Y
        jets = {name: self.layout.jets(theta, name, Y) for name in self.problem.field_names()}
        scalars = self.layout.scalar_vars(theta) if isinstance(theta, Var) else self.layout.scalar_values(theta)
        aux = None
        if self._hilbert is not None:
            aux = {"H_omega": self.hilbert_terms(theta, jets, None if Y is self.collocation.interior else Y)}
        return self.problem.residuals(jets, scalars, Y, aux), jets, scalars

    def condition_terms(self, theta):
        out = []
        for c in self.problem.constraints:
            pts = self.collocation.boundary[c.id]
            jets = {name: self.layout.jets(theta, name, pts) for name in c.fields}
            out.append(_mean_sq(c.residuals(jets)))
        return out

    def terms(self, theta):
        bundle, _, _ = self.interior_residuals(theta)
        loss_f = [mean(square(v)) for v in bundle.values]
        loss_df = [_mean_sq(g) for g in bundle.grads]
        loss_c = self.condition_terms(theta)
        return loss_c, loss_f, loss_df

    def objective(self, theta):
        """Scalar total cost (a Var when ``theta`` is one)."""
        loss_c, loss_f, loss_df = self.terms(theta)
        return combine(loss_c, loss_f, loss_df, self.gamma, self.weights)

    def breakdown(self, theta) -> LossBreakdown:
        theta = np.asarray(value_of(theta), dtype=float)
        loss_c, loss_f, loss_df = (np.array([float(value_of(x)) for x in part]) for part in self.terms(theta))
        total = combine(loss_c, loss_f, loss_df, self.gamma, self.weights)
        return LossBreakdown(loss_c, loss_f, loss_df, self.gamma, float(total), self.weights)


# --------------------------------------------------------------------------
# single-term entry points


def condition_loss(constraint, points, layout: ParameterLayout, theta) -> float:
    """Mean of squared constraint residuals over ``points``."""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        raise ConfigurationError(f"no points for constraint {constraint.id}")
    jets = {name: layout.jets(theta, name, points) for name in constraint.fields}
    return value_of(_mean_sq(constraint.residuals(jets)))


def _bundle(problem, layout, theta, points):
    coll = CollocationSet(np.asarray(points, dtype=float).reshape(-1, problem.dim),
                          {c.id: np.zeros((1, problem.dim)) for c in problem.constraints})
    bundle, _, _ = LossAssembler(problem, layout, coll).interior_residuals(theta)
    return bundle


def equation_loss(k: int, points, problem: ProblemSpec, layout: ParameterLayout, theta) -> float:
    """Mean of ``f_k^2`` over interior ``points``."""
    if not 0 <= k < problem.n_e:
        raise IndexError(f"equation index {k} out of range for {problem.name} (n_e={problem.n_e})")
    return value_of(mean(square(_bundle(problem, layout, theta, points).values[k])))


def gradient_loss(k: int, points, problem: ProblemSpec, layout: ParameterLayout, theta) -> float:
    """Mean of ``|grad f_k|^2`` over interior ``points``."""
    if not 0 <= k < problem.n_e:
        raise IndexError(f"equation index {k} out of range for {problem.name} (n_e={problem.n_e})")
    return value_of(_mean_sq(_bundle(problem, layout, theta, points).grads[k]))


def total_cost(problem: ProblemSpec, layout: ParameterLayout, theta, collocation: CollocationSet,
               gamma: float = DEFAULT_GAMMA, weights=None) -> LossBreakdown:
    out = LossAssembler(problem, layout, collocation, gamma, weights).breakdown(theta)
    out.check()
    return out
