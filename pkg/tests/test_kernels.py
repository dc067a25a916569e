"""Backend-parity and correctness checks for the hot numeric kernels.

The numpy backend is validated against naive pure-Python loops, then the
compiled backend (when built) is held to near-bitwise agreement with numpy.
"""

from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from marquee import kernels
from marquee.kernels import _np

try:
    from marquee.kernels import _cy
except ImportError:
    _cy = None

needs_compiled = pytest.mark.skipif(_cy is None, reason="compiled backend not built")

rng = np.random.default_rng(402)


def random_segments(n_seg, n_rows, max_len=7):
    lens = rng.integers(0, max_len, size=n_seg)
    offsets = np.zeros(n_seg + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(lens)
    idx = rng.integers(0, n_rows, size=int(offsets[-1]))
    return idx, offsets


# -- numpy backend vs naive oracles


def test_affine_forward_matches_loops():
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=4)
    out = _np.affine_forward(x, w, b)
    for i in range(5):
        for j in range(4):
            expected = sum(x[i, k] * w[k, j] for k in range(3)) + b[j]
            assert out[i, j] == pytest.approx(expected, abs=1e-12)


def test_affine_backward_matches_finite_differences():
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    dz = rng.normal(size=(4, 2))
    dx, dw, db = _np.affine_backward(x, w, dz)

    def loss(xx, ww, bb):
        return float(np.sum(_np.affine_forward(xx, ww, bb) * dz))

    eps = 1e-6
    for arr, grad in ((x, dx), (w, dw), (b, db)):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss(x, w, b)
            flat[i] = orig - eps
            down = loss(x, w, b)
            flat[i] = orig
            assert gflat[i] == pytest.approx((up - down) / (2 * eps), abs=1e-5)


def test_activations_pointwise():
    z = rng.normal(size=(6, 5)) * 2
    assert np.array_equal(_np.act_forward(z, _np.ACT_IDENTITY), z)
    relu = _np.act_forward(z, _np.ACT_RELU)
    assert np.all(relu[z <= 0] == 0) and np.array_equal(relu[z > 0], z[z > 0])
    assert np.allclose(_np.act_forward(z, _np.ACT_TANH), np.tanh(z))
    da = rng.normal(size=z.shape)
    assert np.array_equal(_np.act_backward(z, da, _np.ACT_IDENTITY), da)
    back_relu = _np.act_backward(z, da, _np.ACT_RELU)
    assert np.array_equal(back_relu[z > 0], da[z > 0])
    assert np.all(back_relu[z <= 0] == 0)
    t = np.tanh(z)
    assert np.allclose(_np.act_backward(z, da, _np.ACT_TANH), da * (1 - t * t))


def test_unknown_activation_code_raises():
    z = np.zeros((2, 2))
    with pytest.raises(ValueError):
        _np.act_forward(z, 99)
    with pytest.raises(ValueError):
        _np.act_backward(z, z, 99)


def test_segment_mean_matches_python_loops():
    v = rng.normal(size=(9, 4))
    idx, offsets = random_segments(6, 9)
    out = _np.segment_mean(v, idx, offsets)
    for s in range(6):
        members = idx[offsets[s] : offsets[s + 1]]
        if members.size == 0:
            assert np.all(out[s] == 0)
        else:
            expected = sum(v[i] for i in members) / len(members)
            assert np.allclose(out[s], expected, atol=1e-12)


def test_segment_mean_backward_scatters_correctly():
    # reverse-mode check: <dm, segment_mean(v)> gradient wrt v
    v = rng.normal(size=(7, 3))
    idx, offsets = random_segments(5, 7)
    dm = rng.normal(size=(5, 3))
    dv = _np.segment_mean_backward(dm, idx, offsets, 7)
    expected = np.zeros_like(v)
    for s in range(5):
        members = idx[offsets[s] : offsets[s + 1]]
        for i in members:
            expected[i] += dm[s] / len(members)
    assert np.allclose(dv, expected, atol=1e-12)


def test_squared_distances_matches_norm():
    u = rng.normal(size=(8, 5))
    v = rng.normal(size=(8, 5))
    d = _np.squared_distances(u, v)
    assert np.allclose(d, np.linalg.norm(u - v, axis=1) ** 2, atol=1e-12)


def test_sgd_update_in_place():
    p = rng.normal(size=(3, 2))
    g = rng.normal(size=(3, 2))
    expected = p - 0.05 * g
    _np.sgd_update(p, g, 0.05)
    assert np.array_equal(p, expected)


def test_adam_update_matches_reference_formula():
    p = rng.normal(size=4)
    g = rng.normal(size=4)
    m = np.zeros(4)
    v = np.zeros(4)
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    # independent reference, one step at t=1
    m_ref = (1 - b1) * g
    v_ref = (1 - b2) * g * g
    p_ref = p - lr * (m_ref / (1 - b1)) / (np.sqrt(v_ref / (1 - b2)) + eps)
    _np.adam_update(p, g, m, v, 1, lr, b1, b2, eps)
    assert np.allclose(p, p_ref, atol=1e-14)
    assert np.allclose(m, m_ref, atol=1e-14)
    assert np.allclose(v, v_ref, atol=1e-14)


# -- compiled backend vs numpy backend


@needs_compiled
@pytest.mark.parametrize("kind", [_np.ACT_IDENTITY, _np.ACT_RELU, _np.ACT_TANH])
def test_parity_activations(kind):
    z = np.ascontiguousarray(rng.normal(size=(33, 17)))
    da = np.ascontiguousarray(rng.normal(size=z.shape))
    assert np.allclose(_cy.act_forward(z, kind), _np.act_forward(z, kind), atol=1e-15)
    assert np.allclose(_cy.act_backward(z, da, kind), _np.act_backward(z, da, kind), atol=1e-15)


@needs_compiled
def test_parity_affine():
    x = np.ascontiguousarray(rng.normal(size=(21, 13)))
    w = np.ascontiguousarray(rng.normal(size=(13, 9)))
    b = np.ascontiguousarray(rng.normal(size=9))
    dz = np.ascontiguousarray(rng.normal(size=(21, 9)))
    assert np.allclose(_cy.affine_forward(x, w, b), _np.affine_forward(x, w, b), atol=1e-12)
    for got, want in zip(_cy.affine_backward(x, w, dz), _np.affine_backward(x, w, dz)):
        assert np.allclose(got, want, atol=1e-12)


@needs_compiled
def test_parity_segments():
    v = np.ascontiguousarray(rng.normal(size=(50, 8)))
    idx, offsets = random_segments(30, 50)
    dm = np.ascontiguousarray(rng.normal(size=(30, 8)))
    assert np.allclose(_cy.segment_mean(v, idx, offsets), _np.segment_mean(v, idx, offsets), atol=1e-13)
    assert np.allclose(
        _cy.segment_mean_backward(dm, idx, offsets, 50),
        _np.segment_mean_backward(dm, idx, offsets, 50),
        atol=1e-13,
    )


@needs_compiled
def test_parity_distances_and_optimizers():
    u = np.ascontiguousarray(rng.normal(size=(40, 6)))
    w = np.ascontiguousarray(rng.normal(size=(40, 6)))
    assert np.allclose(_cy.squared_distances(u, w), _np.squared_distances(u, w), atol=1e-12)

    p1 = rng.normal(size=(5, 4))
    p2 = p1.copy()
    g = rng.normal(size=(5, 4))
    _cy.sgd_update(p1, g, 0.01)
    _np.sgd_update(p2, g, 0.01)
    assert np.allclose(p1, p2, atol=1e-15)

    m1, v1 = np.zeros_like(p1), np.zeros_like(p1)
    m2, v2 = np.zeros_like(p2), np.zeros_like(p2)
    for t in (1, 2, 3):
        _cy.adam_update(p1, g, m1, v1, t, 1e-3, 0.9, 0.999, 1e-8)
        _np.adam_update(p2, g, m2, v2, t, 1e-3, 0.9, 0.999, 1e-8)
    assert np.allclose(p1, p2, atol=1e-13)


# -- dispatch


def test_package_exposes_selected_backend():
    assert kernels.backend_name in ("numpy", "cython")
    assert kernels.segment_mean is not None


def test_env_var_forces_numpy_backend():
    code = "import marquee.kernels as k; print(k.backend_name)"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"MARQUEE_KERNELS": "numpy", "PATH": "/usr/bin:/bin"},
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "numpy"


def test_env_var_rejects_unknown_backend():
    code = "import marquee.kernels"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"MARQUEE_KERNELS": "fortran", "PATH": "/usr/bin:/bin"},
    )
    assert out.returncode != 0
    assert "MARQUEE_KERNELS" in out.stderr
