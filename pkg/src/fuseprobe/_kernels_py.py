"""NumPy implementations of the numeric kernels.

Mirror of the compiled extension in ``_kernels.pyx``: same function names,
same contracts. Every function takes C-contiguous float32 or float64 arrays
with the reduction axis (where applicable) moved to the last position by the
caller, and returns a fresh array of the same dtype.
"""

import numpy as np


def gemm(a, b):
    """2-D matrix product [M,K] @ [K,N] -> [M,N]."""
    return a @ b


def gemm_batched(a, b):
    """Batched matrix product [B,M,K] @ [B,K,N] -> [B,M,N]."""
    return a @ b


def softmax_lastdim(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_lastdim_bwd(y, gy):
    # dL/dx = y * (gy - sum(gy * y))
    dot = (gy * y).sum(axis=-1, keepdims=True)
    return y * (gy - dot)


def log_softmax_lastdim(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def log_softmax_lastdim_bwd(y, gy):
    # dL/dx = gy - exp(y) * sum(gy)
    total = gy.sum(axis=-1, keepdims=True)
    return gy - np.exp(y) * total


def relu_fwd(x):
    return np.maximum(x, 0)


def relu_bwd(x, gy):
    # subgradient at 0 is 0
    return np.where(x > 0, gy, 0)


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, gy):
    return gy * (1 - y * y)


def sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1 + e)
    return out


def sigmoid_bwd(y, gy):
    return gy * y * (1 - y)


def power_fwd(x, p):
    return np.power(x, p)


def power_bwd(x, p, gy):
    return gy * p * np.power(x, p - 1)


def add_fwd(a, b):
    return a + b


def mul_fwd(a, b):
    return a * b


def scale_fwd(x, c):
    return x * x.dtype.type(c)


def sum_lastdim(x):
    return x.sum(axis=-1)


def mean_lastdim(x):
    return x.mean(axis=-1)


def max_lastdim(x):
    """Max over the last axis; ties resolve to the lowest index.

    Returns (values, argmax indices as int64).
    """
    idx = x.argmax(axis=-1)
    vals = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
    return vals, idx.astype(np.int64)


def max_lastdim_bwd(idx, gy, n):
    """Scatter gy into a zero array of trailing size n at the argmax slots."""
    gx = np.zeros(gy.shape + (n,), dtype=gy.dtype)
    np.put_along_axis(gx, idx[..., None], gy[..., None], axis=-1)
    return gx
