import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sspinn.field_model import ConfigurationError, FieldEntry, ParameterLayout, ParityTag
from sspinn.loss import (DEFAULT_GAMMA, LossAssembler, LossBreakdown, combine, condition_loss,
                         equation_loss, gradient_loss, total_cost)
from sspinn.optim import build_layout
from sspinn.problems import ConstraintSpec, Locus, make_boussinesq, make_burgers
from sspinn.sampling import CollocationSet, build_collocation


@pytest.fixture(scope="module")
def bous():
    p = make_boussinesq(L=5.0)
    layout, theta = build_layout(p, [6, 6], 1, 0.2)
    coll = build_collocation(p, 40, 40, 1.5, 12, 2)
    return p, layout, theta, coll


def test_default_gamma():
    assert DEFAULT_GAMMA == 0.1


def test_zero_network_condition_loss(bous):
    p, layout, theta, coll = bous
    c = next(c for c in p.constraints if c.id == "U2_wall")
    assert condition_loss(c, coll.boundary[c.id], layout, np.zeros_like(theta)) == 0.0


def test_constant_residual_condition():
    lay = ParameterLayout([FieldEntry("u", [1, 1], ParityTag.none(1), np.ones(1))], [])
    c = ConstraintSpec("two", "pointwise", "", ("u",), lambda j: [j["u"].value - 2.0],
                       Locus("point", point=(0.0,)))
    assert condition_loss(c, np.array([[0.3], [1.0]]), lay, np.zeros(2)) == 4.0
    with pytest.raises(ConfigurationError):
        condition_loss(c, np.zeros((0, 1)), lay, np.zeros(2))


def test_condition_loss_brute_force(bous):
    p, layout, theta, coll = bous
    c = next(c for c in p.constraints if c.id == "gradU_far")
    pts = coll.boundary[c.id]
    got = condition_loss(c, pts, layout, theta)
    acc = 0.0
    for y in pts:
        j1 = layout.jets(theta, "U1", y[None])
        j2 = layout.jets(theta, "U2", y[None])
        acc += sum(float(g[0]) ** 2 for g in (*j1.grad, *j2.grad))
    assert got == pytest.approx(acc / len(pts), rel=1e-14)


def test_zero_fields_equation_losses(bous):
    p, layout, theta, coll = bous
    z = np.zeros_like(theta)
    for k in range(6):
        assert equation_loss(k, coll.interior, p, layout, z) == 0.0
        assert gradient_loss(k, coll.interior, p, layout, z) == 0.0
    with pytest.raises(IndexError):
        equation_loss(6, coll.interior, p, layout, z)
    with pytest.raises(IndexError):
        gradient_loss(-1, coll.interior, p, layout, z)


def test_burgers_oracle_equation_loss():
    # mean f^2 of the implicit profile sampled exactly
    from sspinn.oracles import burgers_implicit_jet
    from sspinn.problems import burgers_residual
    y = np.linspace(-5, 5, 201)
    y = y[y != 0]
    f, _ = burgers_residual(burgers_implicit_jet(y, 0.5), 0.5, y)
    assert np.mean(f ** 2) <= 1e-12


def test_gradient_loss_linear_residual():
    from sspinn.field_model import Jet2
    from sspinn.problems import boussinesq_residuals
    Y = np.random.default_rng(0).uniform(0, 1, (10, 2))
    z = np.zeros(10)
    o = np.ones(10)
    zero = Jet2(z, (z, z), ((z, z), (z, z)))
    # U1 = 1.5 y1^2 + 4 y1 y2  -> d1 U1 = 3 y1 + 4 y2 -> grad f5 = (3, 4)
    u1 = Jet2(1.5 * Y[:, 0] ** 2 + 4 * Y[:, 0] * Y[:, 1], (3 * Y[:, 0] + 4 * Y[:, 1], 4 * Y[:, 0]),
              ((3 * o, 4 * o), (4 * o, z)))
    b = boussinesq_residuals({"U1": u1, "U2": zero, "Omega": zero, "Phi": zero, "Psi": zero}, 1.0, Y)
    g = b.grads[4]
    assert np.mean(g[0] ** 2 + g[1] ** 2) == pytest.approx(25.0, abs=1e-13)


def test_gradient_loss_matches_fd_in_1d():
    p = make_burgers()
    layout, theta = build_layout(p, [5, 5], 3, 0.2)
    y = np.linspace(-4, 4, 17)[:, None]
    asm = LossAssembler(p, layout, CollocationSet(y, {"U_norm": np.array([[-2.0]])}))
    h = 1e-5
    b, _, _ = asm.interior_residuals(theta)
    fp = asm.interior_residuals(theta, y + h)[0].values[0]
    fm = asm.interior_residuals(theta, y - h)[0].values[0]
    np.testing.assert_allclose(b.grads[0][0], (fp - fm) / (2 * h), atol=1e-6)
    assert gradient_loss(0, y, p, layout, theta) == pytest.approx(np.mean(b.grads[0][0] ** 2), rel=1e-14)


def test_total_cost_examples():
    ones_c, ones_f = np.ones(5), np.ones(6)
    assert combine(ones_c, ones_f, ones_f, 0.1) == pytest.approx(1.2, abs=1e-15)
    assert combine(np.zeros(5), np.zeros(6), np.zeros(6), 0.1) == 0.0
    lc = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    assert combine(lc, ones_f * 7, ones_f * 3, 0.0) == pytest.approx(lc.mean(), rel=1e-15)


def test_breakdown_check_and_row(bous):
    p, layout, theta, coll = bous
    bd = total_cost(p, layout, theta, coll)
    assert isinstance(bd, LossBreakdown)
    assert len(bd.loss_c) == 5 and len(bd.loss_f) == len(bd.loss_df) == 6
    assert bd.check()
    assert bd.as_row()[-1] == bd.total
    bad = LossBreakdown(bd.loss_c, bd.loss_f, bd.loss_df, bd.gamma, bd.total * 1.01)
    with pytest.raises(AssertionError):
        bad.check()


def test_gamma_linearity(bous):
    p, layout, theta, coll = bous
    a = total_cost(p, layout, theta, coll, gamma=0.1)
    b = total_cost(p, layout, theta, coll, gamma=0.2)
    assert b.total - a.total == pytest.approx(0.1 * (a.loss_f.mean() + a.loss_df.mean()), rel=1e-12)


def test_permutation_invariance(bous):
    p, layout, theta, coll = bous
    perm = np.random.default_rng(5).permutation(len(coll.interior))
    shuffled = CollocationSet(coll.interior[perm], {k: v[::-1] for k, v in coll.boundary.items()})
    a = total_cost(p, layout, theta, coll).total
    b = total_cost(p, layout, theta, shuffled).total
    assert abs(a - b) <= 1e-13 * max(1.0, abs(a))


def test_reflection_invariance(bous):
    p, layout, theta, coll = bous
    half = coll.interior[:30]
    sym = CollocationSet(np.concatenate([half, half * [-1, 1]]), coll.boundary)
    ref = CollocationSet(sym.interior * [-1, 1], coll.boundary)
    assert total_cost(p, layout, theta, sym).total == total_cost(p, layout, theta, ref).total


def test_missing_constraint_points(bous):
    p, layout, theta, coll = bous
    partial = dict(coll.boundary)
    partial.pop("Psi_axis")
    with pytest.raises(ConfigurationError):
        LossAssembler(p, layout, CollocationSet(coll.interior, partial))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=5, max_size=5), st.lists(st.floats(0, 10), min_size=6, max_size=6),
       st.lists(st.floats(0, 10), min_size=6, max_size=6), st.floats(0, 2))
def test_combine_formula(lc, lf, ldf, gamma):
    got = combine(np.array(lc), np.array(lf), np.array(ldf), gamma)
    want = np.mean(lc) + gamma * (np.mean(lf) + np.mean(ldf))
    assert got == pytest.approx(want, rel=1e-13, abs=1e-300)
    assert got >= 0


def test_per_term_weights(bous):
    p, layout, theta, coll = bous
    w = (np.ones(5), np.ones(6), np.zeros(6))
    bd = total_cost(p, layout, theta, coll, weights=w)
    assert bd.total == pytest.approx(bd.loss_c.mean() + 0.1 * bd.loss_f.mean(), rel=1e-14)
