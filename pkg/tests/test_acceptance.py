"""End-to-end acceptance checks; each test records one PASS/FAIL line.

These train real models and take tens of minutes in total on one core.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from sspinn.config import load_config
from sspinn.field_model import init_model, load_checkpoint
from sspinn.hilbert import build_grid, hilbert_at
from sspinn.optim import AdamState, adam_step, minimize_lbfgs
from sspinn.oracles import burgers_implicit, chen_hou_profile, clm_exact, clm_exact_jets
from sspinn.problems import degregorio_residuals
from sspinn.runner import read_csv, solve, sweep
from sspinn.selfcheck import jet_fd_error, param_fd_error, random_configuration

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _cfg(name, out, **problem_options):
    cfg = load_config(CONFIGS / f"{name}.json")
    opts = dict(cfg.problem_options, **problem_options)
    return cfg.with_overrides(output_dir=str(out), problem_options=opts)


def _meta(run):
    return json.loads((run / "metadata.json").read_text())


def _columns(path):
    _, header, rows = read_csv(path)
    arr = np.array(rows, dtype=float)
    return {h: arr[:, k] for k, h in enumerate(header)}


def _trained(run, name="final"):
    layout, theta, _ = load_checkpoint(run / f"checkpoint_{name}.npz")
    return layout, theta


@pytest.fixture(scope="session")
def burgers_i0(tmp_path_factory):
    base = tmp_path_factory.mktemp("c1")
    t0 = time.process_time()
    run = solve(_cfg("burgers_i0", base / "first"))
    cpu = time.process_time() - t0
    return run, cpu, base


# ---------------------------------------------------------------- Burgers


def test_criterion_01_burgers_smooth_i0(burgers_i0, criterion):
    run, cpu, _ = burgers_i0
    lam = _meta(run)["scalars"]["lam"]
    cmp = _columns(run / "oracle_comparison.csv")
    sup = float(np.max(cmp["abs_error"]))
    L = load_config(CONFIGS / "burgers_i0.json").problem_options["L"]
    covers = cmp["y"][0] == -L and cmp["y"][-1] == L
    ok = abs(lam - 0.5) <= 1e-3 and sup <= 1e-3 and covers and cpu <= 1200
    criterion(1, ok, f"lam={lam:.7f} |lam-1/2|={abs(lam - 0.5):.2e} sup={sup:.2e} cpu={cpu:.0f}s")
    assert ok


def test_criterion_02_burgers_smooth_i1(tmp_path, criterion):
    run = solve(_cfg("burgers_i1", tmp_path / "run"))
    lam = _meta(run)["scalars"]["lam"]
    ok = abs(lam - 0.25) <= 1e-3
    criterion(2, ok, f"lam={lam:.7f} |lam-1/4|={abs(lam - 0.25):.2e}")
    assert ok


def test_criterion_03_burgers_nonsmooth(tmp_path, criterion):
    run = solve(_cfg("burgers_nonsmooth", tmp_path / "run"))
    cmp = _columns(run / "oracle_comparison.csv")
    away = np.abs(cmp["y"]) > 0.05
    rms = float(np.sqrt(np.mean((cmp["U"] - burgers_implicit(cmp["y"], 0.4))[away] ** 2)))
    ok = rms <= 5e-3
    criterion(3, ok, f"lam fixed 0.4, rms away from |y|<=0.05 = {rms:.2e}")
    assert ok


# ---------------------------------------------------------------- De Gregorio


def test_criterion_04_clm(tmp_path, criterion):
    y = np.linspace(-50, 50, 1000)
    jets, H = clm_exact_jets(y)
    sub = max(float(np.max(np.abs(r))) for r in degregorio_residuals(jets, H, 0.0, 0.0, y))
    run = solve(_cfg("clm", tmp_path / "run"))
    meta = _meta(run)
    lam = meta["scalars"]["lam"]
    cmp = _columns(run / "oracle_comparison.csv")
    rms = float(np.sqrt(np.mean((cmp["Omega"] - clm_exact(cmp["y"])[0]) ** 2)))
    ok = sub <= 1e-10 and rms <= 1e-2 and abs(lam - clm_exact(0.0)[2]) <= 2e-2
    criterion(4, ok, f"substitution={sub:.1e} rms={rms:.2e} lam={lam:.4f}")
    assert ok


def test_criterion_05_degregorio_inversion(tmp_path, criterion):
    run = solve(_cfg("degregorio_ainv", tmp_path / "inv"))
    a = _meta(run)["scalars"]["a"]
    values = [-1.0, -0.5, 0.0, 0.3, 0.6]
    rows = sweep(load_config(CONFIGS / "clm.json"), "a", values, out_dir=tmp_path / "sweep")
    lams = [r[1] for r in rows]
    monotone = all(r[-1] == "ok" for r in rows) and all(np.diff(lams) < 0)
    ok = abs(a - 0.6887) <= 1e-2 and monotone
    criterion(5, ok, f"a={a:.4f} |a-0.6887|={abs(a - 0.6887):.2e} lam(a)={np.round(lams, 4).tolist()}")
    assert ok


# ---------------------------------------------------------------- Boussinesq


def test_criterion_06_boussinesq(tmp_path, criterion):
    cfg = _cfg("boussinesq", tmp_path / "run")
    net = cfg.network["hidden"]
    n_pts = cfg.collocation["n_near"] + cfg.collocation["n_far"]
    iters = cfg.schedule["adam_iters"] + cfg.schedule["lbfgs_iters"]
    assert len(net) <= 3 and max(net) <= 30 and n_pts <= 5000 and iters <= 20000
    run = solve(cfg)
    meta = _meta(run)
    lam = meta["scalars"]["lam"]
    rep = meta["residual_report"]
    eq, fl = rep["equations"], rep["fields"]
    # each residual against the field(s) it governs
    owner = {"f1": ["Omega"], "f2": ["Phi"], "f3": ["Psi"], "f4": ["Phi", "Psi"], "f5": ["U1", "U2"],
             "f6": ["Omega"]}
    ratios = {k: eq[k]["rms"] / max(fl[f]["rms"] for f in owner[k]) for k in owner}
    layout, theta = _trained(run)
    o = np.zeros((1, 2))
    d1u1 = float(layout.jets(theta, "U1", o).grad[0][0])
    d2u2 = float(layout.jets(theta, "U2", o).grad[1][0])
    f5 = d1u1 + d2u2
    ok = (1.7 <= lam <= 2.2 and all(r <= 1e-2 for r in ratios.values())
          and d1u1 * d2u2 < 0 and abs(f5) <= 1e-2 * abs(d1u1))
    worst = max(ratios, key=ratios.get)
    criterion(6, ok, f"lam={lam:.4f} worst residual/field rms {worst}={ratios[worst]:.2e} "
                     f"d1U1(0)={d1u1:.3f} d2U2(0)={d2u2:.3f}")
    assert ok


def test_criterion_07_chen_hou(tmp_path, criterion):
    run = solve(_cfg("chen_hou", tmp_path / "run"))
    layout, theta = _trained(run)
    rng = np.random.default_rng(0)
    r = 2.0 * np.sqrt(rng.uniform(0, 1, 4000))
    t = rng.uniform(0, np.pi, 4000)
    Y = np.column_stack([r * np.cos(t), r * np.sin(t)])
    om_ref, ph_ref, _ = chen_hou_profile(Y, 1.0 / 6.0)
    rel = {}
    for name, ref in (("Omega", om_ref), ("Phi", ph_ref)):
        got = layout.jets(theta, name, Y).value
        rel[name] = float(np.sqrt(np.mean((got - ref) ** 2) / np.mean(ref ** 2)))
    ok = max(rel.values()) <= 5e-2
    criterion(7, ok, f"relative rms on |y|<=2, y2>=0: Omega={rel['Omega']:.2e} Phi={rel['Phi']:.2e}")
    assert ok


# ---------------------------------------------------------------- numerical suites


def test_criterion_08_differentiation(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_jet = worst_par = 0.0
    for _ in range(100):
        dims, parity, Y, seed = random_configuration(rng)
        worst_jet = max(worst_jet, jet_fd_error(init_model(dims, seed), parity, Y))
        worst_par = max(worst_par, param_fd_error(dims, parity, Y, seed))
    elapsed = time.perf_counter() - t0
    ok = worst_jet <= 1e-5 and worst_par <= 1e-5 and elapsed <= 60
    criterion(8, ok, f"100 configs: jet {worst_jet:.2e}, parameter {worst_par:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_09_optimizers(burgers_i0, criterion):
    def rosen(x):
        a, b = x
        return ((1 - a) ** 2 + 100 * (b - a * a) ** 2,
                np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)]))

    x, _, k, _ = minimize_lbfgs(rosen, np.array([-1.2, 1.0]), max_iter=200, gtol=1e-14)
    ros = float(np.linalg.norm(x - 1.0))
    g = 0.37
    x1, _ = adam_step(AdamState.zeros(1, lr=0.01), np.array([0.5]), np.array([g]))
    adam_err = abs(x1[0] - (0.5 - 0.01 * g / (abs(g) + 1e-8)))
    run, _, _ = burgers_i0
    steps = _columns(run / "lbfgs_steps.csv")
    acc = steps["accepted"] == 1
    moved = acc & (steps["alpha"] > 0)
    violations = int(np.sum(steps["f_new"][moved] >= steps["f_old"][moved]))
    ok = ros <= 1e-8 and k <= 200 and adam_err <= 1e-12 and violations == 0 and moved.sum() > 0
    criterion(9, ok, f"rosenbrock |x-1|={ros:.1e} in {k} it, adam err={adam_err:.1e}, "
                     f"{int(moved.sum())} accepted L-BFGS steps, {violations} non-decreasing")
    assert ok


def test_criterion_10_hilbert(criterion):
    even = lambda t: 1 / (1 + t * t)
    odd = lambda t: t / (1 + t * t)
    ge, go = build_grid(1000.0, 1024, 2.0, 8.0), build_grid(1000.0, 1024, 1.0, 8.0)
    x = np.linspace(-7, 7, 50)
    e1 = float(np.max(np.abs(hilbert_at(even, ge, x) - x / (1 + x * x))))
    e2 = float(np.max(np.abs(hilbert_at(odd, go, x) + 1 / (1 + x * x))))
    g = build_grid(500.0, 512, 2.0, 7.0)
    xs = np.linspace(0.05, 15, 40)
    fe = lambda t: np.exp(-t * t)
    fo = lambda t: t * np.exp(-t * t)
    par = max(float(np.max(np.abs(hilbert_at(fe, g, xs) + hilbert_at(fe, g, -xs)))),
              float(np.max(np.abs(hilbert_at(fo, g, xs) - hilbert_at(fo, g, -xs)))))
    a, b = 2.5, -1.3
    lin = float(np.max(np.abs(hilbert_at(lambda t: a * even(t) + b * fe(t), g, xs)
                              - a * hilbert_at(even, g, xs) - b * hilbert_at(fe, g, xs))))
    ok = e1 <= 1e-6 and e2 <= 1e-6 and par <= 1e-8 and lin <= 1e-8
    criterion(10, ok, f"pairs {e1:.1e}/{e2:.1e}, parity {par:.1e}, linearity {lin:.1e}")
    assert ok


def test_criterion_11_reproducible(burgers_i0, criterion):
    run, _, base = burgers_i0
    again = solve(_cfg("burgers_i0", base / "second"))
    same = (run / "loss_history.csv").read_bytes() == (again / "loss_history.csv").read_bytes()
    criterion(11, same, "loss_history.csv bitwise identical" if same else "loss histories differ")
    assert same
