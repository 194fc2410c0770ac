"""Quick numerical self-tests: derivatives, gradients, quadrature and closed-form profiles."""
from __future__ import annotations

import numpy as np

from .field_model import ODD, EVEN, NONE, ParityTag, ModelParams, eval_jets, init_model
from .hilbert import build_grid, hilbert_at


def jet_fd_error(params, parity, Y, h=1e-5):
    """Largest relative gap between network jets and central differences of the value/gradient."""
    jet = eval_jets(params, parity, Y)
    d = Y.shape[1]
    g, H = jet.grad_array(), jet.hess_array()
    worst = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        jp, jm = eval_jets(params, parity, Y + e), eval_jets(params, parity, Y - e)
        fd_g = (jp.value - jm.value) / (2 * h)
        fd_H = (jp.grad_array() - jm.grad_array()) / (2 * h)
        scale_g = np.max(np.abs(g)) + 1e-3
        scale_H = np.max(np.abs(H)) + 1e-3
        worst = max(worst, np.max(np.abs(fd_g - g[:, i])) / scale_g,
                    np.max(np.abs(fd_H - H[:, :, i])) / scale_H)
    return worst


def param_fd_error(layer_dims, parity, Y, seed, n_probe=6, h=1e-6):
    """Relative gap between the adjoint parameter gradient and central differences.

    The probe objective is the mean square of every jet channel, so the
    check covers second derivatives too.
    """
    from .autodiff import gradient, mean, square
    from .field_model import jets_var

    model = init_model(layer_dims, seed)
    theta = model.flatten()
    scale = model.input_scale

    def fn(t):
        jet = jets_var(t, 0, layer_dims, parity, Y, scale)
        terms = [square(jet.value)] + [square(g) for g in jet.grad]
        terms += [square(jet.hess[i][j]) for i in range(len(jet.grad)) for j in range(i, len(jet.grad))]
        out = mean(terms[0])
        for t_ in terms[1:]:
            out = out + mean(t_)
        return out

    def plain(t):
        jet = eval_jets(ModelParams.from_flat(layer_dims, t, scale), parity, Y)
        d = Y.shape[1]
        out = np.mean(jet.value ** 2) + sum(np.mean(g ** 2) for g in jet.grad)
        out += sum(np.mean(jet.hess[i][j] ** 2) for i in range(d) for j in range(i, d))
        return out

    f, g = gradient(fn, theta)
    rng = np.random.default_rng(seed + 1)
    idx = rng.choice(theta.size, size=min(n_probe, theta.size), replace=False)
    worst = abs(f - plain(theta)) / max(1.0, abs(f))
    for k in idx:
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        fd = (plain(tp) - plain(tm)) / (2 * h)
        worst = max(worst, abs(fd - g[k]) / (np.max(np.abs(g)) + 1e-8))
    return worst


def random_configuration(rng):
    """Random network shape, parity, input scale and evaluation points."""
    d = int(rng.integers(1, 3))
    depth = int(rng.integers(1, 4))
    dims = [d] + [int(rng.integers(2, 9)) for _ in range(depth)] + [1]
    axes = tuple(rng.choice([ODD, EVEN, NONE]) for _ in range(d))
    Y = rng.uniform(-2.0, 2.0, size=(int(rng.integers(1, 6)), d))
    return dims, ParityTag(axes), Y, int(rng.integers(0, 2**31))


def run_checks(n_random=20, seed=0):
    """Return a list of ``(name, value, tolerance, passed)`` rows."""
    from .oracles import burgers_implicit, clm_exact_jets
    from .problems import make_degregorio

    rows = []
    rng = np.random.default_rng(seed)
    jet_err = par_err = 0.0
    for _ in range(n_random):
        dims, parity, Y, s = random_configuration(rng)
        jet_err = max(jet_err, jet_fd_error(init_model(dims, s), parity, Y))
        par_err = max(par_err, param_fd_error(dims, parity, Y, s))
    rows.append(("jet vs finite differences", jet_err, 1e-5, jet_err <= 1e-5))
    rows.append(("parameter gradient vs finite differences", par_err, 1e-5, par_err <= 1e-5))

    grid = build_grid(1000.0, 1024, 1.0, stretch=8.0)
    x = np.linspace(-5, 5, 50)
    e1 = np.max(np.abs(hilbert_at(lambda t: 1 / (1 + t * t), build_grid(1000.0, 1024, 2.0, 8.0), x)
                       - x / (1 + x ** 2)))
    e2 = np.max(np.abs(hilbert_at(lambda t: t / (1 + t * t), grid, x) + 1 / (1 + x ** 2)))
    rows.append(("Hilbert pair 1/(1+y^2)", e1, 1e-6, e1 <= 1e-6))
    rows.append(("Hilbert pair y/(1+y^2)", e2, 1e-6, e2 <= 1e-6))

    y = np.linspace(-9.9, 9.9, 1000)
    jets, _ = clm_exact_jets(y)
    om = lambda t: clm_exact_jets(t)[0]["Omega"].value
    om_y = lambda t: clm_exact_jets(t)[0]["Omega"].grad[0]
    H = (hilbert_at(om, build_grid(1e4, 2048, 1.0, 10.0), y),
         hilbert_at(om_y, build_grid(1e4, 2048, 2.0, 10.0), y))
    prob = make_degregorio(L=10.0)
    bundle = prob.residuals(jets, {"a": 0.0, "lam": 0.0}, y[:, None], {"H_omega": H})
    r = max(float(np.max(np.abs(v))) for v in bundle.values)
    rows.append(("a=0 closed form, quadrature Hilbert", r, 1e-10, r <= 1e-10))

    yy = np.linspace(-10, 10, 1001)
    U = burgers_implicit(yy, 0.5)
    rb = float(np.max(np.abs(yy + U + U ** 3)))
    rows.append(("Burgers implicit relation (lam=1/2)", rb, 1e-12, rb <= 1e-12))
    return rows


def format_rows(rows):
    out = []
    for name, val, tol, ok in rows:
        out.append(f"{'PASS' if ok else 'FAIL'}  {name:<42} {val:10.3e}  (tol {tol:.0e})")
    return "\n".join(out)
