# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled numeric kernels.

Mirror of ``_kernels_py``: same names, same contracts. C-contiguous
float32/float64 inputs, reduction axis last, fresh output arrays.

The fused single-pass loops win where operands are small (per-call
overhead) or where NumPy needs several passes (softmax, argmax + gather,
masked sigmoid). Where NumPy's SIMD ufuncs and BLAS are unbeatable from a
scalar loop (elementwise transcendentals at any size, GEMM beyond tiny
matrices), the wrappers delegate to the fallback implementations above a
measured size threshold; ``benchmarks/bench_backend.py`` documents the
crossovers.
"""

import numpy as np

from . import _kernels_py

# measured crossover points (total elements / total multiply-adds)
cdef Py_ssize_t GEMM_LOOP_MAX_FLOPS = 512
cdef Py_ssize_t SOFTMAX_LOOP_MAX_ELEMS = 4096

cimport numpy as cnp
from libc.math cimport exp, log, pow, tanh

cnp.import_array()

ctypedef fused floating:
    float
    double


def gemm(a, b):
    if a.shape[0] * a.shape[1] * b.shape[1] > GEMM_LOOP_MAX_FLOPS:
        return _kernels_py.gemm(a, b)
    return _gemm_small(a, b)


def _gemm_small(const floating[:, ::1] a, const floating[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    if floating is float:
        out_arr = np.empty((m, n), dtype=np.float32)
    else:
        out_arr = np.empty((m, n), dtype=np.float64)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef floating acc
    with nogil:
        for i in range(m):
            for j in range(n):
                acc = 0
                for p in range(k):
                    acc = acc + a[i, p] * b[p, j]
                out[i, j] = acc
    return out_arr


def gemm_batched(a, b):
    if a.shape[0] * a.shape[1] * a.shape[2] * b.shape[2] > GEMM_LOOP_MAX_FLOPS:
        return _kernels_py.gemm_batched(a, b)
    return _gemm_batched_small(a, b)


def _gemm_batched_small(const floating[:, :, ::1] a, const floating[:, :, ::1] b):
    cdef Py_ssize_t nb = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2]
    if floating is float:
        out_arr = np.empty((nb, m, n), dtype=np.float32)
    else:
        out_arr = np.empty((nb, m, n), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t t, i, j, p
    cdef floating acc
    with nogil:
        for t in range(nb):
            for i in range(m):
                for j in range(n):
                    acc = 0
                    for p in range(k):
                        acc = acc + a[t, i, p] * b[t, p, j]
                    out[t, i, j] = acc
    return out_arr


def _rows_cols(shape):
    cdef Py_ssize_t rows = 1
    cdef Py_ssize_t nd = len(shape)
    cdef Py_ssize_t i
    for i in range(nd - 1):
        rows *= <Py_ssize_t> shape[i]
    return rows, shape[nd - 1]


def softmax_lastdim(x):
    rows, n = _rows_cols(x.shape)
    if rows * n > SOFTMAX_LOOP_MAX_ELEMS:
        return _kernels_py.softmax_lastdim(x)
    return np.asarray(_softmax_rows(x.reshape(rows, n))).reshape(x.shape)


def _softmax_rows(const floating[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    if floating is float:
        out_arr = np.empty((rows, n), dtype=np.float32)
    else:
        out_arr = np.empty((rows, n), dtype=np.float64)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef floating m, s
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0
            for j in range(n):
                out[i, j] = <floating> exp(x[i, j] - m)
                s = s + out[i, j]
            for j in range(n):
                out[i, j] = out[i, j] / s
    return out_arr


def softmax_lastdim_bwd(y, gy):
    rows, n = _rows_cols(y.shape)
    if rows * n > SOFTMAX_LOOP_MAX_ELEMS:
        return _kernels_py.softmax_lastdim_bwd(y, gy)
    return np.asarray(_softmax_rows_bwd(y.reshape(rows, n), gy.reshape(rows, n))).reshape(y.shape)


def _softmax_rows_bwd(const floating[:, ::1] y, const floating[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1]
    if floating is float:
        out_arr = np.empty((rows, n), dtype=np.float32)
    else:
        out_arr = np.empty((rows, n), dtype=np.float64)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef floating dot
    with nogil:
        for i in range(rows):
            dot = 0
            for j in range(n):
                dot = dot + gy[i, j] * y[i, j]
            for j in range(n):
                out[i, j] = y[i, j] * (gy[i, j] - dot)
    return out_arr


def log_softmax_lastdim(x):
    rows, n = _rows_cols(x.shape)
    if rows * n > SOFTMAX_LOOP_MAX_ELEMS:
        return _kernels_py.log_softmax_lastdim(x)
    return np.asarray(_log_softmax_rows(x.reshape(rows, n))).reshape(x.shape)


def _log_softmax_rows(const floating[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    if floating is float:
        out_arr = np.empty((rows, n), dtype=np.float32)
    else:
        out_arr = np.empty((rows, n), dtype=np.float64)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef floating m, s
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0
            for j in range(n):
                s = s + <floating> exp(x[i, j] - m)
            s = <floating> log(s)
            for j in range(n):
                out[i, j] = x[i, j] - m - s
    return out_arr


def log_softmax_lastdim_bwd(y, gy):
    rows, n = _rows_cols(y.shape)
    if rows * n > SOFTMAX_LOOP_MAX_ELEMS:
        return _kernels_py.log_softmax_lastdim_bwd(y, gy)
    return np.asarray(_log_softmax_rows_bwd(y.reshape(rows, n), gy.reshape(rows, n))).reshape(y.shape)


def _log_softmax_rows_bwd(const floating[:, ::1] y, const floating[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1]
    if floating is float:
        out_arr = np.empty((rows, n), dtype=np.float32)
    else:
        out_arr = np.empty((rows, n), dtype=np.float64)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef floating total
    with nogil:
        for i in range(rows):
            total = 0
            for j in range(n):
                total = total + gy[i, j]
            for j in range(n):
                out[i, j] = gy[i, j] - <floating> exp(y[i, j]) * total
    return out_arr


def relu_fwd(x):
    return _kernels_py.relu_fwd(x)


def relu_bwd(x, gy):
    return _kernels_py.relu_bwd(x, gy)


def tanh_fwd(x):
    return _kernels_py.tanh_fwd(x)


def tanh_bwd(y, gy):
    return _kernels_py.tanh_bwd(y, gy)


def sigmoid_fwd(x):
    return np.asarray(_sigmoid_1d(x.reshape(-1))).reshape(x.shape)


def _sigmoid_1d(const floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    if floating is float:
        out_arr = np.empty((n,), dtype=np.float32)
    else:
        out_arr = np.empty((n,), dtype=np.float64)
    cdef floating[::1] out = out_arr
    cdef floating e
    with nogil:
        for i in range(n):
            if x[i] >= 0:
                out[i] = 1 / (1 + <floating> exp(-x[i]))
            else:
                e = <floating> exp(x[i])
                out[i] = e / (1 + e)
    return out_arr


def sigmoid_bwd(y, gy):
    return np.asarray(_sigmoid_bwd_1d(y.reshape(-1), gy.reshape(-1))).reshape(y.shape)


def _sigmoid_bwd_1d(const floating[::1] y, const floating[::1] gy):
    cdef Py_ssize_t n = y.shape[0], i
    if floating is float:
        out_arr = np.empty((n,), dtype=np.float32)
    else:
        out_arr = np.empty((n,), dtype=np.float64)
    cdef floating[::1] out = out_arr
    with nogil:
        for i in range(n):
            out[i] = gy[i] * y[i] * (1 - y[i])
    return out_arr


def power_fwd(x, p):
    return _kernels_py.power_fwd(x, p)


def power_bwd(x, p, gy):
    return _kernels_py.power_bwd(x, p, gy)


def add_fwd(a, b):
    return _kernels_py.add_fwd(a, b)


def mul_fwd(a, b):
    return _kernels_py.mul_fwd(a, b)


def scale_fwd(x, c):
    return _kernels_py.scale_fwd(x, c)


def sum_lastdim(x):
    rows, n = _rows_cols(x.shape)
    return np.asarray(_sum_rows(x.reshape(rows, n))).reshape(x.shape[:len(x.shape) - 1])


def _sum_rows(const floating[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    if floating is float:
        out_arr = np.empty((rows,), dtype=np.float32)
    else:
        out_arr = np.empty((rows,), dtype=np.float64)
    cdef floating[::1] out = out_arr
    cdef floating acc
    with nogil:
        for i in range(rows):
            acc = 0
            for j in range(n):
                acc = acc + x[i, j]
            out[i] = acc
    return out_arr


def mean_lastdim(x):
    n = x.shape[len(x.shape) - 1]
    return scale_fwd(sum_lastdim(x), 1.0 / n)


def max_lastdim(x):
    rows, n = _rows_cols(x.shape)
    vals, idx = _max_rows(x.reshape(rows, n))
    head = x.shape[:len(x.shape) - 1]
    return np.asarray(vals).reshape(head), np.asarray(idx).reshape(head)


def _max_rows(const floating[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    if floating is float:
        vals_arr = np.empty((rows,), dtype=np.float32)
    else:
        vals_arr = np.empty((rows,), dtype=np.float64)
    idx_arr = np.empty((rows,), dtype=np.int64)
    cdef floating[::1] vals = vals_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef floating best
    cdef Py_ssize_t where
    with nogil:
        for i in range(rows):
            best = x[i, 0]
            where = 0
            for j in range(1, n):
                if x[i, j] > best:  # strict: ties keep the lowest index
                    best = x[i, j]
                    where = j
            vals[i] = best
            idx[i] = where
    return vals_arr, idx_arr


def max_lastdim_bwd(idx, gy, n):
    rows = 1
    for d in gy.shape:
        rows *= d
    flat_idx = np.ascontiguousarray(idx.reshape(rows))
    gx = np.asarray(_max_bwd_rows(flat_idx, gy.reshape(rows), int(n)))
    return gx.reshape(gy.shape + (int(n),))


def _max_bwd_rows(const cnp.int64_t[::1] idx, const floating[::1] gy, Py_ssize_t n):
    cdef Py_ssize_t rows = gy.shape[0], i
    if floating is float:
        gx_arr = np.zeros((rows, n), dtype=np.float32)
    else:
        gx_arr = np.zeros((rows, n), dtype=np.float64)
    cdef floating[:, ::1] gx = gx_arr
    with nogil:
        for i in range(rows):
            gx[i, idx[i]] = gy[i]
    return gx_arr
