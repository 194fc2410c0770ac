"""Adam, L-BFGS with a strong Wolfe line search, and the two-stage schedule."""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Var, gradient
from .field_model import ParameterLayout, init_model
from .loss import LossAssembler, LossBreakdown, combine

log = logging.getLogger(__name__)


class ShapeError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    """Non-finite loss; ``theta`` holds the last finite parameter vector."""

    def __init__(self, message, theta, iteration):
        super().__init__(message)
        self.theta = theta
        self.iteration = iteration


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3

    @classmethod
    def zeros(cls, n, **kw):
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: AdamState, params, grad, lr=None):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ShapeError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    step = (state.lr if lr is None else lr) * mhat / (np.sqrt(vhat) + state.eps)
    new = AdamState(m, v, t, state.beta1, state.beta2, state.eps, state.lr)
    return params - step, new


# --------------------------------------------------------------------------
# L-BFGS


@dataclass
class LbfgsState:
    m: int = 20
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 25
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)
    n_skipped: int = 0

    def push(self, s, y):
        sy = float(np.dot(s, y))
        if self.m == 0:
            return False
        if not sy > 1e-12 * float(np.dot(y, y)) or not np.isfinite(sy):
            self.n_skipped += 1
            return False
        self.s_hist.append(s)
        self.y_hist.append(y)
        while len(self.s_hist) > self.m:
            self.s_hist.popleft()
            self.y_hist.popleft()
        return True


@dataclass
class StepInfo:
    accepted: bool
    alpha: float
    f_old: float
    f_new: float
    n_evals: int
    fallback: bool = False
    message: str = ""


def two_loop(g, s_hist, y_hist):
    """``H g`` for the L-BFGS inverse Hessian built from the stored pairs."""
    q = g.copy()
    rhos = [1.0 / float(np.dot(y, s)) for s, y in zip(s_hist, y_hist)]
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(np.dot(s, y)) / float(np.dot(y, y))
    for s, y, rho, a in zip(s_hist, y_hist, rhos, reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


def _cubic_min(a, fa, ga, b, fb, gb):
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0 or not np.isfinite(disc):
        return 0.5 * (a + b)
    d2 = np.sign(b - a) * np.sqrt(disc)
    den = gb - ga + 2.0 * d2
    if den == 0:
        return 0.5 * (a + b)
    return b - (b - a) * (gb + d2 - d1) / den


def strong_wolfe(phi, f0, dphi0, alpha0, c1=1e-4, c2=0.9, max_evals=25):
    """Line search for the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, dphi, payload)``.  Returns
    ``(alpha, f, payload, n_evals, wolfe_ok)``; ``alpha == 0`` signals failure.
    When the curvature condition cannot be met within the budget, the best
    point satisfying sufficient decrease is returned with ``wolfe_ok=False``.
    """
    evals = 0
    a_prev, f_prev, d_prev, p_prev = 0.0, f0, dphi0, None
    best = (0.0, f0, None)
    alpha = alpha0

    def zoom(lo, hi):
        nonlocal evals, best
        (alo, flo, dlo, plo), (ahi, fhi, dhi, _) = lo, hi
        while evals < max_evals:
            a = _cubic_min(alo, flo, dlo, ahi, fhi, dhi)
            lo_b, hi_b = min(alo, ahi), max(alo, ahi)
            w = hi_b - lo_b
            if not (lo_b + 0.1 * w <= a <= hi_b - 0.1 * w):
                a = 0.5 * (alo + ahi)
            f, d, p = phi(a)
            evals += 1
            if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= flo:
                ahi, fhi, dhi = a, (f if np.isfinite(f) else np.inf), (d if np.isfinite(f) else np.inf)
                if not np.isfinite(fhi):
                    fhi, dhi = flo + 1.0, 0.0
                continue
            if f < best[1]:
                best = (a, f, p)
            if abs(d) <= -c2 * dphi0:
                return a, f, p, True
            if d * (ahi - alo) >= 0:
                ahi, fhi, dhi = alo, flo, dlo
            alo, flo, dlo, plo = a, f, d, p
            if abs(ahi - alo) <= 1e-16 * max(1.0, abs(alo)):
                break
        return best[0], best[1], best[2], False

    for i in range(max_evals):
        f, d, p = phi(alpha)
        evals += 1
        if not np.isfinite(f):
            a, fa, pa, ok = zoom((a_prev, f_prev, d_prev, p_prev), (alpha, f_prev + 1.0, 0.0, None))
            return a, fa, pa, evals, ok
        if f > f0 + c1 * alpha * dphi0 or (i > 0 and f >= f_prev):
            a, fa, pa, ok = zoom((a_prev, f_prev, d_prev, p_prev), (alpha, f, d, p))
            return a, fa, pa, evals, ok
        if f < best[1]:
            best = (alpha, f, p)
        if abs(d) <= -c2 * dphi0:
            return alpha, f, p, evals, True
        if d >= 0:
            a, fa, pa, ok = zoom((alpha, f, d, p), (a_prev, f_prev, d_prev, p_prev))
            return a, fa, pa, evals, ok
        a_prev, f_prev, d_prev, p_prev = alpha, f, d, p
        alpha *= 2.0
    return best[0], best[1], best[2], evals, False


def lbfgs_step(state: LbfgsState, params, f, grad, objective):
    """One L-BFGS iteration from ``params`` with value ``f`` and gradient ``grad``.

    ``objective(x)`` returns ``(f, g)``.  Returns
    ``(new_params, new_f, new_grad, state, info)``.  On line-search failure a
    backtracking steepest-descent step is tried; if that also fails the
    parameters are returned unchanged with ``info.accepted = False``.
    """
    x = np.asarray(params, dtype=float)
    g = np.asarray(grad, dtype=float)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return x, f, g, state, StepInfo(True, 0.0, f, f, 0, message="zero gradient")
    d = -two_loop(g, state.s_hist, state.y_hist)
    dphi0 = float(np.dot(g, d))
    if not dphi0 < 0 or not np.isfinite(dphi0):
        state.s_hist.clear()
        state.y_hist.clear()
        d = -g
        dphi0 = -gnorm ** 2
    alpha0 = 1.0 if state.s_hist else min(1.0, 1.0 / float(np.abs(g).sum()))

    def phi(a):
        xa = x + a * d
        fa, ga = objective(xa)
        return fa, float(np.dot(ga, d)), (xa, ga)

    alpha, f_new, payload, n_evals, ok = strong_wolfe(phi, f, dphi0, alpha0, state.c1, state.c2, state.max_ls)
    if alpha > 0 and payload is not None and f_new < f:
        x_new, g_new = payload
        state.push(x_new - x, g_new - g)
        msg = "" if ok else "curvature condition not met"
        return x_new, f_new, g_new, state, StepInfo(True, alpha, f, f_new, n_evals, message=msg)
    # steepest-descent fallback with Armijo backtracking
    d = -g
    dphi0 = -gnorm ** 2
    a = min(1.0, 1.0 / gnorm)
    for _ in range(state.max_ls):
        xa = x + a * d
        fa, ga = objective(xa)
        n_evals += 1
        if np.isfinite(fa) and fa <= f + state.c1 * a * dphi0 and fa < f:
            state.s_hist.clear()
            state.y_hist.clear()
            state.push(xa - x, ga - g)
            return xa, fa, ga, state, StepInfo(True, a, f, fa, n_evals, True, "line search failed; steepest descent")
        a *= 0.5
    return x, f, g, state, StepInfo(False, 0.0, f, f, n_evals, True, "line search failed")


def minimize_lbfgs(objective, x0, max_iter=100, m=20, gtol=1e-12, ftol=0.0, callback=None):
    """Plain L-BFGS driver; returns ``(x, f, n_iter, infos)``."""
    state = LbfgsState(m=m)
    x = np.asarray(x0, dtype=float).copy()
    f, g = objective(x)
    infos = []
    k = 0
    for k in range(1, max_iter + 1):
        if np.linalg.norm(g, np.inf) <= gtol:
            k -= 1
            break
        x, f_new, g, state, info = lbfgs_step(state, x, f, g, objective)
        infos.append(info)
        if callback is not None:
            callback(k, x, f_new, info)
        if not info.accepted or (ftol > 0 and f - f_new <= ftol * max(1.0, abs(f))):
            f = f_new
            break
        f = f_new
    return x, f, k, infos


# --------------------------------------------------------------------------
# training


@dataclass
class Schedule:
    adam_iters: int = 5000
    lbfgs_iters: int = 5000
    lr: float = 1e-3
    lr_decay: float = 1.0  # multiplicative factor per ``lr_decay_steps``
    lr_decay_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lbfgs_memory: int = 20
    c1: float = 1e-4
    c2: float = 0.9
    log_every: int = 100
    gtol: float = 0.0

    def __post_init__(self):
        if self.adam_iters < 0 or self.lbfgs_iters < 0:
            raise ValueError("iteration counts must be non-negative")

    def lr_at(self, t):
        return self.lr * self.lr_decay ** (t / self.lr_decay_steps)


@dataclass
class TrainResult:
    theta: np.ndarray
    layout: ParameterLayout
    history: list
    breakdown: LossBreakdown
    scalars: dict
    lbfgs_infos: list
    stage_thetas: dict


def build_layout(problem, network_dims, seed, input_scale=None, scalar_init=None):
    """Fresh layout and initial vector: one network per field, scalars at window midpoints."""
    from .field_model import FieldEntry, WindowedScalar

    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(len(problem.fields))
    fields, models = [], {}
    for fs, s in zip(problem.fields, seeds):
        dims = network_dims[fs.name] if isinstance(network_dims, dict) else network_dims
        dims = [problem.dim, *dims, 1] if dims[0] != problem.dim or dims[-1] != 1 else list(dims)
        scale = input_scale.get(fs.name, 1.0) if isinstance(input_scale, dict) else (input_scale or 1.0)
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (problem.dim,)).copy()
        fields.append(FieldEntry(fs.name, dims, fs.parity, scale))
        models[fs.name] = init_model(dims, int(s), scale)
    scalars = []
    for role in problem.scalars:
        if role.fixed is not None:
            scalars.append(WindowedScalar(role.name, fixed=role.fixed))
        else:
            sc = WindowedScalar(role.name, role.lo, role.hi, 0.0)
            if scalar_init and role.name in scalar_init:
                from .field_model import unsquash
                sc.raw = unsquash(scalar_init[role.name], role.lo, role.hi)
            scalars.append(sc)
    layout = ParameterLayout(fields, scalars)
    return layout, layout.pack(models)


class _Objective:
    """Total cost with gradient; remembers the last breakdown it produced."""

    def __init__(self, assembler: LossAssembler):
        self.assembler = assembler
        self.last = None
        self.n_evals = 0

    def __call__(self, theta):
        holder = {}

        def fn(t: Var):
            loss_c, loss_f, loss_df = self.assembler.terms(t)
            holder["parts"] = (loss_c, loss_f, loss_df)
            return combine(loss_c, loss_f, loss_df, self.assembler.gamma, self.assembler.weights)

        self.n_evals += 1
        try:
            f, g = gradient(fn, theta)
        except NonFiniteError:
            return np.inf, np.full_like(theta, np.nan)
        lc, lf, ldf = (np.array([float(x.value) if isinstance(x, Var) else float(x) for x in part])
                       for part in holder["parts"])
        self.last = LossBreakdown(lc, lf, ldf, self.assembler.gamma, f, self.assembler.weights)
        return f, g


def train(problem, schedule: Schedule, collocation, seed, *, network_dims=(20, 20, 20), gamma=0.1,
          weights=None, input_scale=None, layout=None, theta0=None, scalar_init=None,
          on_log=None, on_stage=None):
    """Adam then L-BFGS on the total cost; every trainable scalar moves jointly.

    ``on_log(row)`` receives history rows ``(iteration, stage, breakdown,
    scalars, elapsed)`` every ``schedule.log_every`` iterations and at the
    end; ``on_stage(name, theta)`` fires at stage boundaries.
    """
    if layout is None:
        layout, theta = build_layout(problem, network_dims, seed, input_scale, scalar_init)
    else:
        theta = np.asarray(theta0, dtype=float).copy()
    assembler = LossAssembler(problem, layout, collocation, gamma, weights)
    obj = _Objective(assembler)
    history, infos, stage_thetas = [], [], {}
    t0 = time.perf_counter()

    def record(it, stage, bd, th):
        row = (it, stage, bd, layout.scalar_values(th), time.perf_counter() - t0)
        history.append(row)
        if on_log is not None:
            on_log(row)

    last_good = theta.copy()
    it = 0
    # stage 1: Adam
    if schedule.adam_iters > 0:
        st = AdamState.zeros(layout.size, beta1=schedule.beta1, beta2=schedule.beta2,
                             eps=schedule.eps, lr=schedule.lr)
        for k in range(schedule.adam_iters):
            f, g = obj(theta)
            if not np.isfinite(f):
                raise TrainingAborted(f"non-finite loss at Adam iteration {it}", last_good, it)
            if it % schedule.log_every == 0:
                record(it, "adam", obj.last, theta)
            last_good = theta
            theta, st = adam_step(st, theta, g, schedule.lr_at(k))
            it += 1
    stage_thetas["adam"] = theta.copy()
    if on_stage is not None:
        on_stage("adam", theta)
    # stage 2: L-BFGS
    f, g = obj(theta)
    if not np.isfinite(f):
        raise TrainingAborted(f"non-finite loss at iteration {it}", last_good, it)
    if schedule.lbfgs_iters > 0:
        ls = LbfgsState(m=schedule.lbfgs_memory, c1=schedule.c1, c2=schedule.c2)
        for k in range(schedule.lbfgs_iters):
            if schedule.gtol > 0 and np.linalg.norm(g, np.inf) <= schedule.gtol:
                break
            theta_new, f_new, g_new, ls, info = lbfgs_step(ls, theta, f, g, obj)
            infos.append(info)
            if not info.accepted:
                log.info("L-BFGS stalled at iteration %d: %s", it, info.message)
                break
            if not np.isfinite(f_new):
                raise TrainingAborted(f"non-finite loss at L-BFGS iteration {it}", theta, it)
            theta, f, g = theta_new, f_new, g_new
            it += 1
            if it % schedule.log_every == 0:
                record(it, "lbfgs", assembler.breakdown(theta), theta)
    final = assembler.breakdown(theta)
    record(it, "final", final, theta)
    stage_thetas["final"] = theta.copy()
    if on_stage is not None:
        on_stage("final", theta)
    layout.sync_scalars(theta)
    return TrainResult(theta, layout, history, final, layout.scalar_values(theta), infos, stage_thetas)
