"""Small tanh networks that return exact second-order jets.

Each unknown field is a fully connected network ``R^d -> R`` (``d`` is 1 or
2).  Jets (value, gradient, Hessian with respect to the input) are pushed
forward layer by layer in closed form; parameter gradients of anything built
from those jets come from a hand-written adjoint of that augmented forward
pass, hooked into :mod:`sspinn.autodiff` as a single multi-output node.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .autodiff import NonFiniteError, Var, custom, gradient, sigmoid, value_of

CHECKPOINT_VERSION = 1

ODD, EVEN, NONE = "odd", "even", "none"


class ConfigurationError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# --------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class ParityTag:
    """Per-axis parity (``"odd"``, ``"even"`` or ``"none"``)."""

    axes: tuple

    def __post_init__(self):
        for a in self.axes:
            if a not in (ODD, EVEN, NONE):
                raise ConfigurationError(f"unknown parity {a!r}")

    @classmethod
    def none(cls, d):
        return cls((NONE,) * d)

    @property
    def tagged(self):
        return [(i, a) for i, a in enumerate(self.axes) if a != NONE]


@dataclass
class ModelParams:
    layer_dims: list
    weights: list
    biases: list
    input_scale: np.ndarray = None

    def __post_init__(self):
        self.layer_dims = [int(n) for n in self.layer_dims]
        _check_dims(self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ConfigurationError("one weight matrix and bias vector per layer expected")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[k + 1], self.layer_dims[k]) or b.shape != (self.layer_dims[k + 1],):
                raise ConfigurationError(f"layer {k} does not chain: {W.shape}, {b.shape}")
        d = self.layer_dims[0]
        if self.input_scale is None:
            self.input_scale = np.ones(d)
        self.input_scale = np.broadcast_to(np.asarray(self.input_scale, dtype=float), (d,)).copy()

    @property
    def dim(self):
        return self.layer_dims[0]

    @property
    def n_params(self):
        return count_params(self.layer_dims)

    def flatten(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, layer_dims, vec, input_scale=None):
        Ws, bs = unflatten(layer_dims, np.asarray(vec, dtype=float))
        return cls(list(layer_dims), [W.copy() for W in Ws], [b.copy() for b in bs], input_scale)


@dataclass
class WindowedScalar:
    """Trainable scalar squashed into ``(lo, hi)``; ``fixed`` pins it instead."""

    name: str
    lo: float = 0.0
    hi: float = 1.0
    raw: float = 0.0
    fixed: float | None = None

    def __post_init__(self):
        if self.fixed is None and not self.lo < self.hi:
            raise ConfigurationError(f"{self.name}: empty window [{self.lo}, {self.hi}]")

    @property
    def trainable(self):
        return self.fixed is None

    @property
    def value(self):
        if self.fixed is not None:
            return float(self.fixed)
        return float(squash(self.raw, self.lo, self.hi))


def squash(raw, lo, hi):
    return lo + (hi - lo) * sigmoid(raw)


def unsquash(value, lo, hi):
    s = (value - lo) / (hi - lo)
    if not 0.0 < s < 1.0:
        raise ConfigurationError(f"value {value} outside window ({lo}, {hi})")
    return float(np.log(s) - np.log1p(-s))


@dataclass
class Jet2:
    """Value, gradient and symmetric Hessian; entries are arrays over points.

    ``grad[i]`` is the derivative along axis ``i``; ``hess[i][j]`` is the same
    object as ``hess[j][i]``.
    """

    value: object
    grad: tuple
    hess: tuple

    @property
    def dim(self):
        return len(self.grad)

    def grad_array(self):
        return np.stack([np.asarray(value_of(g)) for g in self.grad], axis=-1)

    def hess_array(self):
        d = self.dim
        rows = [np.stack([np.asarray(value_of(self.hess[i][j])) for j in range(d)], axis=-1)
                for i in range(d)]
        return np.stack(rows, axis=-2)


# --------------------------------------------------------------------------
# construction


def _check_dims(layer_dims):
    if len(layer_dims) < 2:
        raise ConfigurationError("layer_dims needs at least an input and an output width")
    if layer_dims[0] not in (1, 2):
        raise ConfigurationError(f"input width must be 1 or 2, got {layer_dims[0]}")
    if layer_dims[-1] != 1:
        raise ConfigurationError(f"output width must be 1, got {layer_dims[-1]}")
    if any(int(n) < 1 for n in layer_dims):
        raise ConfigurationError("layer widths must be positive")


def count_params(layer_dims):
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def unflatten(layer_dims, vec):
    Ws, bs, pos = [], [], 0
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        Ws.append(vec[pos:pos + a * b].reshape(b, a))
        pos += a * b
        bs.append(vec[pos:pos + b])
        pos += b
    return Ws, bs


def init_model(layer_dims: Sequence[int], seed: int, input_scale=None) -> ModelParams:
    """Gaussian weights with std ``1/sqrt(fan_in)`` and zero biases."""
    layer_dims = [int(n) for n in layer_dims]
    _check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        Ws.append(rng.standard_normal((b, a)) / np.sqrt(a))
        bs.append(np.zeros(b))
    return ModelParams(layer_dims, Ws, bs, input_scale)


# --------------------------------------------------------------------------
# forward / adjoint over a batch of points


def _n_channels(d):
    return 1 + d + d * (d + 1) // 2


def _input_jet(Y, scale):
    M, d = Y.shape
    X = np.zeros((_n_channels(d), M, d))
    X[0] = Y * scale
    for i in range(d):
        X[1 + i, :, i] = scale[i]
    return X


def _forward(Ws, bs, X0, d):
    """Raw network jets at the rows of the input jet ``X0``; returns (out, cache)."""
    C = X0.shape[0]
    X = X0
    cache = []
    last = len(Ws) - 1
    for k, (W, b) in enumerate(zip(Ws, bs)):
        M, hin = X.shape[1], X.shape[2]
        Z = (X.reshape(C * M, hin) @ W.T).reshape(C, M, W.shape[0])
        Z[0] += b
        cache.append((X, Z))
        X = Z if k == last else kernels.tanh_jet_forward(Z, d)
    return X, cache


def _backward(Ws, cache, Gout, d):
    """Adjoint of :func:`_forward`; returns per-layer (dW, db)."""
    grads = [None] * len(Ws)
    G = Gout
    last = len(Ws) - 1
    for k in range(last, -1, -1):
        X, Z = cache[k]
        Gz = G if k == last else kernels.tanh_jet_backward(Z, G, d)
        C, M, hout = Gz.shape
        hin = X.shape[2]
        Gz2 = Gz.reshape(C * M, hout)
        dW = Gz2.T @ X.reshape(C * M, hin)
        db = Gz[0].sum(axis=0)
        grads[k] = (dW, db)
        if k > 0:
            G = (Gz2 @ Ws[k]).reshape(C, M, hin)
    return grads


def _parity_combos(parity, d):
    """Sign patterns of the reflections and their weights.

    Returns a list of ``(sigma, weight)`` with ``sigma`` the per-axis sign
    applied to the input and ``weight`` the coefficient of that reflected copy.
    """
    combos = [(np.ones(d), 1.0)]
    for axis, kind in parity.tagged:
        nxt = []
        for sigma, w in combos:
            nxt.append((sigma, 0.5 * w))
            s2 = sigma.copy()
            s2[axis] = -1.0
            nxt.append((s2, 0.5 * w * (1.0 if kind == EVEN else -1.0)))
        combos = nxt
    return combos


def _channel_signs(sigma, d):
    signs = [1.0] + [sigma[i] for i in range(d)]
    signs += [sigma[i] * sigma[j] for i, j in kernels.hess_pairs(d)]
    return np.array(signs)


class _Evaluator:
    """Parity-symmetrized jet evaluation of one network at fixed points."""

    def __init__(self, layer_dims, parity, Y, input_scale):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        d = layer_dims[0]
        if Y.shape[1] != d:
            Y = Y.reshape(-1, d)
        self.layer_dims = layer_dims
        self.d = d
        self.N = Y.shape[0]
        self.combos = _parity_combos(parity if parity is not None else ParityTag.none(d), d)
        Ys = np.concatenate([Y * sigma for sigma, _ in self.combos], axis=0)
        self.X0 = _input_jet(Ys, np.asarray(input_scale, dtype=float))
        # coefficient per (channel, combo)
        self.coef = np.stack([w * _channel_signs(sigma, d) for sigma, w in self.combos], axis=1)

    def forward(self, vec):
        Ws, bs = unflatten(self.layer_dims, vec)
        raw, cache = _forward(Ws, bs, self.X0, self.d)
        C = raw.shape[0]
        raw = raw[:, :, 0].reshape(C, len(self.combos), self.N)
        out = np.einsum("ck,ckn->cn", self.coef, raw)
        return out, (Ws, cache)

    def backward(self, state, Gout):
        Ws, cache = state
        C = Gout.shape[0]
        Graw = (self.coef[:, :, None] * Gout[:, None, :]).reshape(C, -1, 1)
        grads = _backward(Ws, cache, Graw, self.d)
        return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


def _jet_from_channels(chs, d):
    pairs = kernels.hess_pairs(d)
    value = chs[0]
    grad = tuple(chs[1 + i] for i in range(d))
    H = [[None] * d for _ in range(d)]
    for q, (i, j) in enumerate(pairs):
        H[i][j] = chs[1 + d + q]
        H[j][i] = chs[1 + d + q]
    return Jet2(value, grad, tuple(tuple(r) for r in H))


def eval_jets(params: ModelParams, parity: ParityTag | None, Y) -> Jet2:
    """Jets of the symmetrized network at every row of ``Y`` (arrays of length N)."""
    ev = _Evaluator(params.layer_dims, parity, Y, params.input_scale)
    out, _ = ev.forward(params.flatten())
    return _jet_from_channels(list(out), ev.d)


def eval_jet2(params: ModelParams, parity: ParityTag | None, y) -> Jet2:
    """Jet at a single point; ``grad`` is a length-d vector, ``hess`` a d x d matrix."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    jet = eval_jets(params, parity, y)
    return Jet2(float(jet.value[0]), jet.grad_array()[0], jet.hess_array()[0])


def jets_var(theta: Var, offset: int, layer_dims, parity, Y, input_scale) -> Jet2:
    """Jets whose entries are :class:`Var` nodes depending on ``theta``.

    The network parameters are ``theta[offset:offset + count_params(layer_dims)]``.
    """
    n = count_params(layer_dims)
    ev = _Evaluator(layer_dims, parity, Y, input_scale)
    vec = theta.value[offset:offset + n]
    out, state = ev.forward(vec)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(out), axis=0))[0])
        raise NonFiniteError(f"non-finite network jet at point {bad} (y = {np.asarray(Y)[bad].tolist()})", bad)
    full = theta.value.shape[0]

    def vjp(grads):
        Gout = np.zeros_like(out)
        for c, g in enumerate(grads):
            if g is not None:
                Gout[c] = g
        gvec = np.zeros(full)
        gvec[offset:offset + n] = ev.backward(state, Gout)
        return (gvec,)

    chans = custom(list(out), (theta,), vjp)
    return _jet_from_channels(chans, ev.d)


# --------------------------------------------------------------------------
# flat parameter layout over several fields and scalars


@dataclass
class FieldEntry:
    name: str
    layer_dims: list
    parity: ParityTag
    input_scale: np.ndarray
    offset: int = 0

    @property
    def size(self):
        return count_params(self.layer_dims)


@dataclass
class ParameterLayout:
    """Maps a flat trainable vector onto named networks and windowed scalars."""

    fields: list = field(default_factory=list)
    scalars: list = field(default_factory=list)

    def __post_init__(self):
        pos = 0
        for f in self.fields:
            f.offset = pos
            pos += f.size
        self._scalar_offset = {}
        for s in self.scalars:
            if s.trainable:
                self._scalar_offset[s.name] = pos
                pos += 1
        self.size = pos

    def field(self, name):
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def scalar(self, name):
        for s in self.scalars:
            if s.name == name:
                return s
        raise KeyError(name)

    def pack(self, models: dict) -> np.ndarray:
        theta = np.zeros(self.size)
        for f in self.fields:
            theta[f.offset:f.offset + f.size] = models[f.name].flatten()
        for s in self.scalars:
            if s.trainable:
                theta[self._scalar_offset[s.name]] = s.raw
        return theta

    def models(self, theta) -> dict:
        return {f.name: ModelParams.from_flat(f.layer_dims, theta[f.offset:f.offset + f.size], f.input_scale)
                for f in self.fields}

    def scalar_values(self, theta) -> dict:
        out = {}
        for s in self.scalars:
            if s.trainable:
                out[s.name] = float(squash(theta[self._scalar_offset[s.name]], s.lo, s.hi))
            else:
                out[s.name] = float(s.fixed)
        return out

    def scalar_vars(self, theta: Var) -> dict:
        out = {}
        for s in self.scalars:
            if s.trainable:
                out[s.name] = squash(theta[self._scalar_offset[s.name]], s.lo, s.hi)
            else:
                out[s.name] = float(s.fixed)
        return out

    def sync_scalars(self, theta):
        """Copy raw scalar values out of ``theta`` into the scalar records."""
        for s in self.scalars:
            if s.trainable:
                s.raw = float(theta[self._scalar_offset[s.name]])

    def jets(self, theta, name, Y) -> Jet2:
        f = self.field(name)
        if isinstance(theta, Var):
            return jets_var(theta, f.offset, f.layer_dims, f.parity, Y, f.input_scale)
        model = ModelParams.from_flat(f.layer_dims, theta[f.offset:f.offset + f.size], f.input_scale)
        return eval_jets(model, f.parity, Y)


def parameter_gradient(objective, theta):
    """Value and gradient of ``objective(theta_var)`` with respect to the flat vector.

    ``objective`` receives a :class:`Var` wrapping ``theta`` and must build a
    scalar from jets (:meth:`ParameterLayout.jets`), windowed scalars and
    arithmetic.  Non-finite intermediates raise
    :class:`sspinn.autodiff.NonFiniteError`.
    """
    return gradient(objective, theta)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, layout: ParameterLayout, theta, seed: int, meta: dict | None = None):
    """Write a versioned ``.npz`` checkpoint (float64, row-major)."""
    header = {
        "format": "sspinn-checkpoint",
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "fields": [{"name": f.name, "layer_dims": list(f.layer_dims), "parity": list(f.parity.axes),
                    "input_scale": [float(s) for s in f.input_scale]} for f in layout.fields],
        "scalars": [{"name": s.name, "lo": s.lo, "hi": s.hi, "fixed": s.fixed} for s in layout.scalars],
        "meta": meta or {},
    }
    theta = np.asarray(theta, dtype=np.float64)
    arrays = {}
    for f in layout.fields:
        Ws, bs = unflatten(f.layer_dims, theta[f.offset:f.offset + f.size])
        for k, (W, b) in enumerate(zip(Ws, bs)):
            arrays[f"{f.name}/W{k}"] = np.ascontiguousarray(W)
            arrays[f"{f.name}/b{k}"] = np.ascontiguousarray(b)
    raws = np.array([theta[layout._scalar_offset[s.name]] if s.trainable else np.nan
                     for s in layout.scalars], dtype=np.float64)
    arrays["scalars/raw"] = raws
    arrays["scalars/lo"] = np.array([s.lo for s in layout.scalars], dtype=np.float64)
    arrays["scalars/hi"] = np.array([s.hi for s in layout.scalars], dtype=np.float64)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path):
    """Return ``(layout, theta, header)`` from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as z:
        try:
            header = json.loads(str(z["header"]))
        except KeyError as exc:
            raise CheckpointError(f"{path}: not a checkpoint") from exc
        if header.get("format") != "sspinn-checkpoint":
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        fields = [FieldEntry(f["name"], f["layer_dims"], ParityTag(tuple(f["parity"])),
                             np.array(f["input_scale"], dtype=float)) for f in header["fields"]]
        raws = z["scalars/raw"]
        scalars = []
        for s, raw in zip(header["scalars"], raws):
            scalars.append(WindowedScalar(s["name"], s["lo"], s["hi"],
                                          0.0 if s["fixed"] is not None else float(raw), s["fixed"]))
        layout = ParameterLayout(fields, scalars)
        theta = np.zeros(layout.size)
        for f in fields:
            parts = []
            for k in range(len(f.layer_dims) - 1):
                parts.append(z[f"{f.name}/W{k}"].ravel())
                parts.append(z[f"{f.name}/b{k}"])
            theta[f.offset:f.offset + f.size] = np.concatenate(parts)
        for s in scalars:
            if s.trainable:
                theta[layout._scalar_offset[s.name]] = s.raw
    return layout, theta, header
