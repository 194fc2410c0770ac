"""Self-similar systems: fields, residuals, constraints and domains.

Residuals are written once with first-order dual numbers (value plus
spatial gradient), so each residual comes with its gradient for the
smoothness penalty.  Components may be numpy arrays or autodiff Vars.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field_model import EVEN, NONE, ODD, ConfigurationError, Jet2, ParityTag


class Dual:
    """Value with its spatial gradient; ``tan[i]`` is the derivative along axis ``i``."""

    __slots__ = ("val", "tan")

    def __init__(self, val, tan):
        self.val = val
        self.tan = tuple(tan)

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(other, (0,) * len(self.tan))

    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.val + o.val, tuple(_add(a, b) for a, b in zip(self.tan, o.tan)))

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, tuple(_neg(a) for a in self.tan))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.val * other, tuple(_mul(a, other) for a in self.tan))
        return Dual(self.val * other.val,
                    tuple(_add(_mul(a, other.val), _mul(self.val, b)) for a, b in zip(self.tan, other.tan)))

    __rmul__ = __mul__


def _add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return a + b


def _neg(a):
    return 0 if _is_zero(a) else -a


def _mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return 0
    return a * b


def _is_zero(a):
    return isinstance(a, (int, float)) and a == 0


def field_dual(jet: Jet2) -> Dual:
    return Dual(jet.value, jet.grad)


def deriv_dual(jet: Jet2, i: int) -> Dual:
    return Dual(jet.grad[i], tuple(jet.hess[i][j] for j in range(len(jet.grad))))


def coord_dual(Y, i, d) -> Dual:
    return Dual(Y[:, i] if np.ndim(Y) == 2 else Y, tuple(1.0 if j == i else 0 for j in range(d)))


@dataclass
class ResidualBundle:
    values: list
    grads: list  # per equation, tuple over axes

    @classmethod
    def from_duals(cls, duals):
        d = len(duals[0].tan)
        return cls([r.val for r in duals], [tuple(r.tan[i] for i in range(d)) for r in duals])


# --------------------------------------------------------------------------
# residuals


def _split(Y, d):
    Y = np.asarray(Y, dtype=float)
    return Y.reshape(-1, d) if d > 1 else Y.reshape(-1)


def boussinesq_residuals(jets: dict, lam, Y) -> ResidualBundle:
    """The six vorticity-form residuals and their gradients.

    ``jets`` maps ``U1, U2, Omega, Phi, Psi`` to :class:`Jet2` at the rows of ``Y``.
    """
    Y = _split(Y, 2)
    y1, y2 = coord_dual(Y, 0, 2), coord_dual(Y, 1, 2)
    U1, U2 = field_dual(jets["U1"]), field_dual(jets["U2"])
    Om, Ph, Ps = field_dual(jets["Omega"]), field_dual(jets["Phi"]), field_dual(jets["Psi"])
    U1_1, U1_2 = deriv_dual(jets["U1"], 0), deriv_dual(jets["U1"], 1)
    U2_1, U2_2 = deriv_dual(jets["U2"], 0), deriv_dual(jets["U2"], 1)
    Om_1, Om_2 = deriv_dual(jets["Omega"], 0), deriv_dual(jets["Omega"], 1)
    Ph_1, Ph_2 = deriv_dual(jets["Phi"], 0), deriv_dual(jets["Phi"], 1)
    Ps_1, Ps_2 = deriv_dual(jets["Psi"], 0), deriv_dual(jets["Psi"], 1)
    c = 1.0 + lam
    v1 = y1 * c + U1
    v2 = y2 * c + U2
    f1 = Om + v1 * Om_1 + v2 * Om_2 - Ph
    f2 = (U1_1 + 2.0) * Ph + v1 * Ph_1 + v2 * Ph_2 + U2_1 * Ps
    f3 = (U2_2 + 2.0) * Ps + v1 * Ps_1 + v2 * Ps_2 + U1_2 * Ph
    f4 = Ph_2 - Ps_1
    f5 = U1_1 + U2_2
    f6 = Om - (U1_2 - U2_1)
    return ResidualBundle.from_duals([f1, f2, f3, f4, f5, f6])


def burgers_residual(jet: Jet2, lam, y):
    """``f = -lam U + ((1+lam) y + U) U_y`` and ``df/dy``."""
    Y = _split(y, 1)
    yd = coord_dual(Y, 0, 1)
    U, Uy = field_dual(jet), deriv_dual(jet, 0)
    f = U * (-lam) + (yd * (1.0 + lam) + U) * Uy
    return f.val, f.tan[0]


def degregorio_residuals(jets: dict, hilbert_of_omega, a, lam, y):
    """Self-similar generalized De Gregorio residuals.

    ``hilbert_of_omega`` is ``(H[Omega](y), d/dy H[Omega](y))``.  Returns
    ``(f, g, df, dg)`` with ``f`` the transport/stretching balance and
    ``g = U_y - H[Omega]`` the velocity coupling.
    """
    Y = _split(y, 1)
    yd = coord_dual(Y, 0, 1)
    Om, Om_y = field_dual(jets["Omega"]), deriv_dual(jets["Omega"], 0)
    U, U_y = field_dual(jets["U"]), deriv_dual(jets["U"], 0)
    HOm = Dual(hilbert_of_omega[0], (hilbert_of_omega[1],))
    f = Om + (yd * (1.0 + lam) - U * a) * Om_y + Om * U_y
    g = U_y - HOm
    return f.val, g.val, f.tan[0], g.tan[0]


def euler_error_terms(y, s, lam, Phi, U2):
    """Error terms of the axisymmetric Euler reduction in self-similar variables.

    Returns ``(E1, E2)``; both decay like ``exp(-(1+lam) s)`` for fixed ``y``.
    """
    y2 = float(np.asarray(y, dtype=float).reshape(-1)[1])
    e = np.exp(-(1.0 + lam) * s)
    q = y2 * e
    den = 1.0 + q
    if den <= 0.0:
        raise ValueError(f"1 + y2 exp(-(1+lam)s) = {den} must be positive")
    E1 = -q * (q + 2.0) * (q * q + 2.0 * q + 2.0) / den ** 4 * Phi
    E2 = -e * U2 / den
    return E1, E2


# --------------------------------------------------------------------------
# problem descriptions


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ConfigurationError(f"degenerate box {self.lo} .. {self.hi}")

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, Y, tol=0.0):
        Y = np.asarray(Y, dtype=float).reshape(-1, self.dim)
        return np.all((Y >= np.array(self.lo) - tol) & (Y <= np.array(self.hi) + tol), axis=1)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Locus:
    """Where a constraint is sampled.

    ``kind`` is ``"point"`` (``point``), ``"faces"`` (``faces`` is a tuple of
    ``(axis, value)`` hyperplanes clipped to the domain box).
    """

    kind: str
    point: tuple = ()
    faces: tuple = ()

    def contains(self, Y, box: Box, tol=0.0):
        Y = np.asarray(Y, dtype=float).reshape(-1, box.dim)
        inside = box.contains(Y, tol)
        if self.kind == "point":
            return inside & np.all(np.abs(Y - np.array(self.point)) <= tol, axis=1)
        on = np.zeros(len(Y), dtype=bool)
        for axis, v in self.faces:
            on |= np.abs(Y[:, axis] - v) <= tol
        return inside & on

    def to_dict(self):
        return {"kind": self.kind, "point": list(self.point), "faces": [list(f) for f in self.faces]}


@dataclass
class ConstraintSpec:
    """``g(jets) - target`` squared and averaged over points on ``locus``.

    ``expr(jets)`` returns a list of components; the pointwise squared
    residual is the sum of their squares.
    """

    id: str
    kind: str  # "pointwise", "far-field" or "normalization"
    description: str
    fields: tuple
    expr: object
    locus: Locus
    target: float = 0.0

    def residuals(self, jets):
        comps = self.expr(jets)
        return [c - self.target for c in comps] if self.target else list(comps)

    def to_dict(self):
        return {"id": self.id, "kind": self.kind, "description": self.description,
                "fields": list(self.fields), "locus": self.locus.to_dict(), "target": self.target}


@dataclass
class FieldSpec:
    name: str
    parity: ParityTag


@dataclass
class ScalarRole:
    name: str
    lo: float | None = None
    hi: float | None = None
    fixed: float | None = None

    def to_dict(self):
        return {"name": self.name, "lo": self.lo, "hi": self.hi, "fixed": self.fixed}


@dataclass
class ProblemSpec:
    name: str
    dim: int
    fields: list
    scalars: list
    equations: list
    constraints: list
    domain: Box
    residual_fn: object = None
    hilbert: dict | None = None
    notes: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        declared = {f.name for f in self.fields}
        for c in self.constraints:
            missing = set(c.fields) - declared
            if missing:
                raise ConfigurationError(f"constraint {c.id} references undeclared fields {missing}")
            if c.locus.kind == "point" and not self.domain.contains(np.array(c.locus.point), 1e-12)[0]:
                raise ConfigurationError(f"constraint {c.id} point outside the domain")

    @property
    def n_e(self):
        return len(self.equations)

    @property
    def n_b(self):
        return len(self.constraints)

    def field_names(self):
        return [f.name for f in self.fields]

    def residuals(self, jets, scalars, Y, aux=None):
        """Return a :class:`ResidualBundle` for the problem's equations."""
        return self.residual_fn(jets, scalars, Y, aux)

    def to_dict(self):
        return {
            "name": self.name, "dim": self.dim,
            "fields": [{"name": f.name, "parity": list(f.parity.axes)} for f in self.fields],
            "scalars": [s.to_dict() for s in self.scalars],
            "equations": list(self.equations),
            "constraints": [c.to_dict() for c in self.constraints],
            "domain": self.domain.to_dict(),
            "hilbert": self.hilbert, "notes": self.notes, "options": self.options,
        }


def make_boussinesq(L=10.0, lam_window=(1.0, 3.0), lam_fixed=None, normalization=None) -> ProblemSpec:
    """Boussinesq in vorticity form on the quarter box ``[0, L]^2``.

    The left half-plane is covered by the hard parities.  ``normalization``
    replaces the default ``d Omega/dy1 (0) = 1`` by ``Omega(point) = value``
    when given as ``(point, value)``.
    """
    odd_y1 = ParityTag((ODD, NONE))
    even_y1 = ParityTag((EVEN, NONE))
    fields = [FieldSpec("U1", odd_y1), FieldSpec("U2", even_y1), FieldSpec("Omega", odd_y1),
              FieldSpec("Phi", odd_y1), FieldSpec("Psi", even_y1)]
    box = Box((0.0, 0.0), (float(L), float(L)))
    outer = Locus("faces", faces=((0, float(L)), (1, float(L))))
    constraints = [
        ConstraintSpec("U2_wall", "pointwise", "U2 = 0 on y2 = 0 (non-penetration)", ("U2",),
                       lambda j: [j["U2"].value], Locus("faces", faces=((1, 0.0),))),
        ConstraintSpec("Psi_axis", "pointwise", "Psi = 0 on y1 = 0 (from Theta(0, y2) = 0)", ("Psi",),
                       lambda j: [j["Psi"].value], Locus("faces", faces=((0, 0.0),))),
    ]
    if normalization is None:
        constraints.append(ConstraintSpec(
            "Omega_norm", "normalization", "d Omega / d y1 = 1 at the origin", ("Omega",),
            lambda j: [j["Omega"].grad[0]], Locus("point", point=(0.0, 0.0)), 1.0))
    else:
        pt, val = normalization
        constraints.append(ConstraintSpec(
            "Omega_norm", "normalization", f"Omega = {val} at {tuple(pt)}", ("Omega",),
            lambda j: [j["Omega"].value], Locus("point", point=tuple(float(v) for v in pt)), float(val)))
    constraints += [
        ConstraintSpec("gradU_far", "far-field", "all entries of grad U vanish on the outer boundary",
                       ("U1", "U2"),
                       lambda j: [j["U1"].grad[0], j["U1"].grad[1], j["U2"].grad[0], j["U2"].grad[1]], outer),
        ConstraintSpec("PhiPsi_far", "far-field", "Phi and Psi vanish on the outer boundary", ("Phi", "Psi"),
                       lambda j: [j["Phi"].value, j["Psi"].value], outer),
    ]
    lam = (ScalarRole("lam", fixed=float(lam_fixed)) if lam_fixed is not None
           else ScalarRole("lam", float(lam_window[0]), float(lam_window[1])))

    def residual_fn(jets, scalars, Y, aux):
        return boussinesq_residuals(jets, scalars["lam"], Y)

    return ProblemSpec("boussinesq", 2, fields, [lam], ["f1", "f2", "f3", "f4", "f5", "f6"],
                       constraints, box, residual_fn,
                       options={"L": L, "lam_window": list(lam_window), "lam_fixed": lam_fixed,
                                "normalization": None if normalization is None
                                else [list(normalization[0]), normalization[1]]})


def make_burgers(L=5.0, lam_window=(1.0 / 3.0, 1.0), lam_fixed=None) -> ProblemSpec:
    """Self-similar Burgers on ``[-L, L]`` with ``U`` odd and ``U(-2) = 1``."""
    if L <= 2.0:
        raise ConfigurationError("the normalization point y = -2 must lie inside the domain")
    fields = [FieldSpec("U", ParityTag((ODD,)))]
    constraints = [ConstraintSpec("U_norm", "normalization", "U(-2) = 1", ("U",),
                                  lambda j: [j["U"].value], Locus("point", point=(-2.0,)), 1.0)]
    lam = (ScalarRole("lam", fixed=float(lam_fixed)) if lam_fixed is not None
           else ScalarRole("lam", float(lam_window[0]), float(lam_window[1])))

    def residual_fn(jets, scalars, Y, aux):
        f, df = burgers_residual(jets["U"], scalars["lam"], Y)
        return ResidualBundle([f], [(df,)])

    return ProblemSpec("burgers", 1, fields, [lam], ["f"], constraints, Box((-float(L),), (float(L),)),
                       residual_fn, options={"L": L, "lam_window": list(lam_window), "lam_fixed": lam_fixed})


def make_degregorio(L=20.0, a_value=0.0, a_window=None, lam_window=(-0.9, 1.5), lam_fixed=None,
                    hilbert_L=None, hilbert_n=512, tail_exponent=None, hilbert_stretch=6.0) -> ProblemSpec:
    """Generalized De Gregorio with ``Omega`` and ``U`` odd and ``Omega'(0) = 2``.

    The Hilbert transform is taken over ``[-hilbert_L, hilbert_L]`` (defaults to
    the training half-width) with an algebraic tail of ``tail_exponent``.
    """
    odd = ParityTag((ODD,))
    fields = [FieldSpec("Omega", odd), FieldSpec("U", odd)]
    constraints = [ConstraintSpec("Omega_norm", "normalization", "d Omega / dy = 2 at 0", ("Omega",),
                                  lambda j: [j["Omega"].grad[0]], Locus("point", point=(0.0,)), 2.0)]
    lam = (ScalarRole("lam", fixed=float(lam_fixed)) if lam_fixed is not None
           else ScalarRole("lam", float(lam_window[0]), float(lam_window[1])))
    a = (ScalarRole("a", float(a_window[0]), float(a_window[1])) if a_window is not None
         else ScalarRole("a", fixed=float(a_value)))
    hl = float(hilbert_L if hilbert_L is not None else L)
    if hl < L:
        raise ConfigurationError("the Hilbert grid must cover the training domain")

    def residual_fn(jets, scalars, Y, aux):
        f, g, df, dg = degregorio_residuals(jets, aux["H_omega"], scalars["a"], scalars["lam"], Y)
        return ResidualBundle([f, g], [(df,), (dg,)])

    return ProblemSpec("degregorio", 1, fields, [lam, a], ["f", "g"], constraints,
                       Box((-float(L),), (float(L),)), residual_fn,
                       hilbert={"field": "Omega", "L": hl, "n": int(hilbert_n),
                                "tail_exponent": tail_exponent, "stretch": float(hilbert_stretch)},
                       options={"L": L, "a_value": a_value, "a_window": a_window,
                                "lam_window": list(lam_window), "lam_fixed": lam_fixed})


REGISTRY = {
    "boussinesq": make_boussinesq,
    "burgers": make_burgers,
    "degregorio": make_degregorio,
}


def get_problem(name: str, **options) -> ProblemSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None
    try:
        return factory(**options)
    except TypeError as exc:
        raise ConfigurationError(f"bad options for {name}: {exc}") from None
