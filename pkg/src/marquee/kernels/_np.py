"""Numpy implementation of the hot kernels.

Reference backend: always available, used as the fallback when the compiled
extension is absent and as the ground truth in backend-parity tests. All
arrays are float64 and C-contiguous; activation kinds are the integer codes
from :mod:`marquee.kernels`.
"""

from __future__ import annotations

import numpy as np

ACT_IDENTITY = 0
ACT_RELU = 1
ACT_TANH = 2


def affine_forward(x, w, b):
    """x @ w + b for a batch of row vectors."""
    return x @ w + b


def affine_backward(x, w, dz):
    """Gradients of an affine layer: returns (dx, dw, db)."""
    dx = dz @ w.T
    dw = x.T @ dz
    db = dz.sum(axis=0)
    return dx, dw, db


def act_forward(z, kind):
    if kind == ACT_IDENTITY:
        return z.copy()
    if kind == ACT_RELU:
        return np.maximum(z, 0.0)
    if kind == ACT_TANH:
        return np.tanh(z)
    raise ValueError(f"unknown activation code {kind}")


def act_backward(z, da, kind):
    if kind == ACT_IDENTITY:
        return da.copy()
    if kind == ACT_RELU:
        return np.where(z > 0.0, da, 0.0)
    if kind == ACT_TANH:
        t = np.tanh(z)
        return da * (1.0 - t * t)
    raise ValueError(f"unknown activation code {kind}")


def segment_mean(v, idx, offsets):
    """Mean of v[idx[offsets[s]:offsets[s+1]]] per segment s.

    Empty segments yield a zero row.
    """
    n_seg = len(offsets) - 1
    out = np.zeros((n_seg, v.shape[1]))
    for s in range(n_seg):
        lo, hi = offsets[s], offsets[s + 1]
        if hi > lo:
            out[s] = v[idx[lo:hi]].sum(axis=0) / (hi - lo)
    return out


def segment_mean_backward(dm, idx, offsets, n_rows):
    """Scatter segment-mean gradients back onto the pooled rows."""
    dv = np.zeros((n_rows, dm.shape[1]))
    n_seg = len(offsets) - 1
    for s in range(n_seg):
        lo, hi = offsets[s], offsets[s + 1]
        if hi > lo:
            contrib = dm[s] / (hi - lo)
            np.add.at(dv, idx[lo:hi], contrib)
    return dv


def sgd_update(param, grad, lr):
    """In-place p <- p - lr * g."""
    param -= lr * grad


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """In-place bias-corrected Adam step; t is the 1-based step count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def squared_distances(u, v):
    """Row-wise squared euclidean distance between paired rows of u and v."""
    d = u - v
    return np.einsum("ij,ij->i", d, d)
