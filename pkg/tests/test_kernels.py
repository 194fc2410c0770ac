import os
import subprocess
import sys

import numpy as np
import pytest

from sspinn import kernels

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable or disabled")


def _jet(d, n=40, h=7, seed=0):
    rng = np.random.default_rng(seed)
    C = 1 + d + d * (d + 1) // 2
    return rng.normal(size=(C, n, h)), rng.normal(size=(C, n, h))


@needs_numba
@pytest.mark.parametrize("d", [1, 2])
def test_tanh_forward_paths_agree(d):
    Z, _ = _jet(d)
    a = kernels.tanh_jet_forward(Z, d, use_numba=False)
    b = kernels.tanh_jet_forward(Z, d, use_numba=True)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


@needs_numba
@pytest.mark.parametrize("d", [1, 2])
def test_tanh_backward_paths_agree(d):
    Z, G = _jet(d, seed=3)
    a = kernels.tanh_jet_backward(Z, G, d, use_numba=False)
    b = kernels.tanh_jet_backward(Z, G, d, use_numba=True)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-14)


@needs_numba
@pytest.mark.parametrize("lam", [0.5, 0.25, 0.4])
def test_root_paths_agree(lam):
    y = np.linspace(-30, 30, 2001)
    a = kernels.implicit_power_root(y, lam, use_numba=False)
    b = kernels.implicit_power_root(y, lam, use_numba=True)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_tanh_forward_closed_form_d1():
    # value, first and second derivative of tanh(z(x)) with z = x: T, 1 - T^2, -2 T (1 - T^2)
    x = np.linspace(-3, 3, 11)
    Z = np.stack([x, np.ones_like(x), np.zeros_like(x)])[:, :, None]
    out = kernels.tanh_jet_forward(Z, 1, use_numba=False)[:, :, 0]
    T = np.tanh(x)
    np.testing.assert_allclose(out[0], T, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out[1], 1 - T * T, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out[2], -2 * T * (1 - T * T), rtol=0, atol=1e-15)


def test_backward_is_adjoint_of_forward():
    d = 2
    Z, G = _jet(d, n=5, h=3, seed=9)
    dZ = np.random.default_rng(1).normal(size=Z.shape)
    eps = 1e-6
    fd = (kernels.tanh_jet_forward(Z + eps * dZ, d) - kernels.tanh_jet_forward(Z - eps * dZ, d)) / (2 * eps)
    lhs = np.sum(G * fd)
    rhs = np.sum(kernels.tanh_jet_backward(Z, G, d) * dZ)
    assert lhs == pytest.approx(rhs, rel=1e-7)


def test_env_flag_disables_numba():
    env = dict(os.environ, SSPINN_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from sspinn import kernels; print(kernels.HAVE_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
