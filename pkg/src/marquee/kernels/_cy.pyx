# Compiled implementation of the hot kernels. Matches marquee.kernels._np
# function for function; parity is enforced by tests/test_kernels.py.
#
# Matrix products go through BLAS dgemm (row-major arrays are handed to the
# Fortran routine as their own transposes); everything else is fused C loops.

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ACT_IDENTITY = 0
ACT_RELU = 1
ACT_TANH = 2


cdef void _gemm_rowmajor(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                         bint trans_a, bint trans_b) noexcept nogil:
    # c = op(a) @ op(b) with all three buffers row-major.
    # Row-major X (r x c) is column-major X^T, so compute c^T = op(b)^T op(a)^T.
    cdef int m, n, k, lda, ldb, ldc
    cdef char ta, tb
    # BLAS sees op(A)=op_b(b)^T (m x k), op(B)=op_a(a)^T (k x n), C=c^T (m x n)
    n = a.shape[1] if trans_a else a.shape[0]          # rows of op(a)
    k = a.shape[0] if trans_a else a.shape[1]          # cols of op(a)
    m = b.shape[0] if trans_b else b.shape[1]          # cols of op(b)
    ta = b'T' if trans_b else b'N'
    tb = b'T' if trans_a else b'N'
    lda = b.shape[1]
    ldb = a.shape[1]
    ldc = m
    cdef double one = 1.0, zero = 0.0
    dgemm(&ta, &tb, &m, &n, &k, &one, &b[0, 0], &lda, &a[0, 0], &ldb,
          &zero, &c[0, 0], &ldc)


def affine_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t n = x.shape[0], n_out = w.shape[1]
    out = np.empty((n, n_out))
    cdef double[:, ::1] z = out
    cdef Py_ssize_t i, j
    if n == 0 or n_out == 0:
        return out
    if x.shape[1] == 0:
        for i in range(n):
            for j in range(n_out):
                z[i, j] = b[j]
        return out
    _gemm_rowmajor(x, w, z, False, False)
    for i in range(n):
        for j in range(n_out):
            z[i, j] += b[j]
    return out


def affine_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] dz):
    cdef Py_ssize_t n = x.shape[0], n_in = x.shape[1], n_out = w.shape[1]
    dx_arr = np.zeros((n, n_in))
    dw_arr = np.zeros((n_in, n_out))
    db_arr = np.zeros(n_out)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, j
    if n > 0 and n_in > 0 and n_out > 0:
        _gemm_rowmajor(dz, w, dx, False, True)
        _gemm_rowmajor(x, dz, dw, True, False)
    for i in range(n):
        for j in range(n_out):
            db[j] += dz[i, j]
    return dx_arr, dw_arr, db_arr


def act_forward(double[:, ::1] z, int kind):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    out = np.empty((n, d))
    cdef double[:, ::1] a = out
    cdef Py_ssize_t i, j
    if kind == ACT_IDENTITY:
        for i in range(n):
            for j in range(d):
                a[i, j] = z[i, j]
    elif kind == ACT_RELU:
        for i in range(n):
            for j in range(d):
                a[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
    elif kind == ACT_TANH:
        for i in range(n):
            for j in range(d):
                a[i, j] = tanh(z[i, j])
    else:
        raise ValueError(f"unknown activation code {kind}")
    return out


def act_backward(double[:, ::1] z, double[:, ::1] da, int kind):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    out = np.empty((n, d))
    cdef double[:, ::1] dz = out
    cdef double t
    cdef Py_ssize_t i, j
    if kind == ACT_IDENTITY:
        for i in range(n):
            for j in range(d):
                dz[i, j] = da[i, j]
    elif kind == ACT_RELU:
        for i in range(n):
            for j in range(d):
                dz[i, j] = da[i, j] if z[i, j] > 0.0 else 0.0
    elif kind == ACT_TANH:
        for i in range(n):
            for j in range(d):
                t = tanh(z[i, j])
                dz[i, j] = da[i, j] * (1.0 - t * t)
    else:
        raise ValueError(f"unknown activation code {kind}")
    return out


def segment_mean(double[:, ::1] v, cnp.int64_t[::1] idx, cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1, d = v.shape[1]
    out = np.zeros((n_seg, d))
    cdef double[:, ::1] m = out
    cdef Py_ssize_t s, p, j, lo, hi
    cdef double inv
    for s in range(n_seg):
        lo = offsets[s]
        hi = offsets[s + 1]
        if hi > lo:
            for p in range(lo, hi):
                for j in range(d):
                    m[s, j] += v[idx[p], j]
            inv = 1.0 / (hi - lo)
            for j in range(d):
                m[s, j] *= inv
    return out


def segment_mean_backward(double[:, ::1] dm, cnp.int64_t[::1] idx, cnp.int64_t[::1] offsets,
                          Py_ssize_t n_rows):
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1, d = dm.shape[1]
    out = np.zeros((n_rows, d))
    cdef double[:, ::1] dv = out
    cdef Py_ssize_t s, p, j, lo, hi, row
    cdef double inv
    for s in range(n_seg):
        lo = offsets[s]
        hi = offsets[s + 1]
        if hi > lo:
            inv = 1.0 / (hi - lo)
            for p in range(lo, hi):
                row = idx[p]
                for j in range(d):
                    dv[row, j] += dm[s, j] * inv
    return out


def sgd_update(cnp.ndarray param, cnp.ndarray grad, double lr):
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = grad.reshape(-1)
    cdef Py_ssize_t i
    for i in range(p.shape[0]):
        p[i] -= lr * g[i]


def adam_update(cnp.ndarray param, cnp.ndarray grad, cnp.ndarray m_arr,
                cnp.ndarray v_arr, long t, double lr, double beta1,
                double beta2, double eps):
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = grad.reshape(-1)
    cdef double[::1] m = m_arr.reshape(-1)
    cdef double[::1] v = v_arr.reshape(-1)
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef double m_hat, v_hat
    cdef Py_ssize_t i
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        m_hat = m[i] / c1
        v_hat = v[i] / c2
        p[i] -= lr * m_hat / (sqrt(v_hat) + eps)


def squared_distances(double[:, ::1] u, double[:, ::1] v):
    cdef Py_ssize_t n = u.shape[0], d = u.shape[1]
    out = np.empty(n)
    cdef double[::1] r = out
    cdef double acc, diff
    cdef Py_ssize_t i, j
    for i in range(n):
        acc = 0.0
        for j in range(d):
            diff = u[i, j] - v[i, j]
            acc += diff * diff
        r[i] = acc
    return out
