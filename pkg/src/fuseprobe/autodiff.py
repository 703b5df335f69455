"""Reverse-mode automatic differentiation over dense float tensors.

The operation set is exactly what the temporal fusion heads and the linear
probe need: matrix products, stable (log-)softmax, a small family of
elementwise maps, reductions, and the structural ops (reshape, transpose,
slice, concat, expand) required to compose attention blocks, an LSTM, and
dilated causal convolutions out of them.

Semantics:

* Tensors store float32 by default; float64 is supported end to end and is
  mandatory inside :func:`grad_check`.
* Forward ops validate their outputs: any NaN/Inf raises
  :class:`NonFiniteError` (finite in, finite out).
* Broadcasting is restricted to leading batch dimensions. An operand may
  omit leading axes or carry size-1 leading axes; interior size-1 axes do
  not broadcast (use :func:`expand`).
* The tape is single-use: calling backward over a graph whose nodes were
  already consumed raises :class:`GraphConsumedError`. Leaves with
  ``requires_grad=False`` never get a gradient materialized.

Tensors are immutable during forward/backward. The optimizer mutates leaf
``.data`` buffers between graphs, which is safe because graphs do not
outlive a backward pass.
"""

import numpy as np

from .backend import K


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf from finite inputs."""


class GraphConsumedError(RuntimeError):
    """Backward was invoked twice over the same recorded nodes."""


_FLOAT_DTYPES = (np.float32, np.float64)


def _contig(arr):
    # np.ascontiguousarray promotes 0-d to 1-d; 0-d is contiguous already
    if arr.flags["C_CONTIGUOUS"]:
        return arr
    return np.ascontiguousarray(arr)


class Tensor:
    """Dense n-d array plus autodiff bookkeeping.

    ``data`` is a NumPy array (float32 or float64), ``grad`` is filled in by
    a backward pass for tensors with ``requires_grad=True``, and ``node``
    links op outputs to the recorded computation.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = _contig(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        Graph.from_root(self).backward()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars fold into scale/shift, tensors follow op rules.
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, other)
        return add(self, other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -other)
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Node:
    """One recorded forward op: inputs, output, and a backward rule."""

    __slots__ = ("op", "inputs", "out", "backward_fn", "spent")

    def __init__(self, op, inputs, out, backward_fn):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.spent = False


class Graph:
    """Topologically ordered view of the nodes reachable from one root.

    The order guarantees each node is visited exactly once in the backward
    pass, creators before consumers. A graph is single-use; its nodes are
    marked spent once backward runs.
    """

    def __init__(self, root, nodes):
        self.root = root
        self.nodes = nodes

    @classmethod
    def from_root(cls, root):
        if not isinstance(root, Tensor):
            raise TypeError("backward root must be a Tensor")
        if not root.requires_grad:
            raise ValueError("backward root does not require grad")
        nodes = []
        state = {}  # id(node) -> 0 discovered, 1 emitted
        stack = [root]
        while stack:
            node = stack[-1].node
            if node is None:
                stack.pop()
                continue
            status = state.get(id(node))
            if status is None:
                state[id(node)] = 0
                for parent in node.inputs:
                    if parent.requires_grad and parent.node is not None and id(parent.node) not in state:
                        stack.append(parent)
            elif status == 0:
                state[id(node)] = 1
                nodes.append(node)
                stack.pop()
            else:
                stack.pop()
        for node in nodes:
            if node.spent:
                raise GraphConsumedError(
                    f"graph through op {node.op!r} was already consumed; re-run the forward pass"
                )
        return cls(root, nodes)

    def backward(self, seed=None):
        root = self.root
        if seed is None:
            if root.data.size != 1:
                raise ShapeError("implicit backward seed requires a scalar root")
            seed = np.ones_like(root.data)
        root.grad = np.asarray(seed, dtype=root.data.dtype)
        for node in reversed(self.nodes):
            node.spent = True
            out_grad = node.out.grad
            if out_grad is None:
                continue
            grads = node.backward_fn(out_grad)
            for parent, g in zip(node.inputs, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g


def _attach(out, op, inputs, backward_fn):
    out.node = Node(op, tuple(inputs), out, backward_fn)
    return out


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"op {op!r} produced a non-finite value")


def _check_same_dtype(op, *tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError(f"op {op!r}: mixed dtypes {dt} and {t.data.dtype}")
    return dt


def _result(op, data, inputs, backward_fn):
    _check_finite(data, op)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs), dtype=data.dtype)
    if out.requires_grad:
        _attach(out, op, inputs, backward_fn)
    return out


def constant(value, like=None, dtype=None):
    """Non-trainable tensor; scalar values are expanded to ``like``'s shape."""
    if like is not None:
        dtype = dtype or like.data.dtype
        return Tensor(np.full(like.data.shape, value, dtype=dtype))
    return Tensor(np.asarray(value, dtype=dtype or np.float32))


# ---------------------------------------------------------------------------
# broadcasting helpers (leading batch dims only)


def _leading_broadcast_shape(op, sa, sb):
    nd = max(len(sa), len(sb))
    pa = (1,) * (nd - len(sa)) + tuple(sa)
    pb = (1,) * (nd - len(sb)) + tuple(sb)
    out = []
    mismatch_done = False
    for axis, (da, db) in enumerate(zip(pa, pb)):
        if da == db:
            if da != 1:
                mismatch_done = True
            out.append(da)
        elif da == 1 or db == 1:
            if mismatch_done:
                raise ShapeError(
                    f"op {op!r}: broadcast of {sa} with {sb} is not limited to leading batch dims"
                )
            out.append(max(da, db))
        else:
            raise ShapeError(f"op {op!r}: shapes {sa} and {sb} do not align")
    return tuple(out)


def _unbroadcast(g, shape):
    """Sum gradient g down to ``shape`` (inverse of leading-dim broadcast)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# matrix product


def matmul(a, b):
    """Matrix product over the last two axes; leading dims broadcast."""
    _check_same_dtype("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dims")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    lead = _leading_broadcast_shape("matmul", a.data.shape[:-2], b.data.shape[:-2])

    def run(x, y):
        if x.ndim == 2 and y.ndim == 2:
            return K.gemm(np.ascontiguousarray(x), np.ascontiguousarray(y))
        bx = np.broadcast_to(x, lead + x.shape[-2:])
        by = np.broadcast_to(y, lead + y.shape[-2:])
        batch = int(np.prod(lead)) if lead else 1
        flat = K.gemm_batched(
            np.ascontiguousarray(bx.reshape(batch, *x.shape[-2:])),
            np.ascontiguousarray(by.reshape(batch, *y.shape[-2:])),
        )
        return flat.reshape(lead + (x.shape[-2], y.shape[-1]))

    data = run(a.data, b.data)

    def backward(gy):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(run(gy, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(run(np.swapaxes(a.data, -1, -2), gy), b.data.shape)
        return ga, gb

    return _result("matmul", data, (a, b), backward)


# ---------------------------------------------------------------------------
# softmax family


def _move_last(arr, axis):
    return np.ascontiguousarray(np.moveaxis(arr, axis, -1))


def softmax(x, axis=-1):
    """Numerically stabilized softmax along ``axis`` (max subtraction)."""
    axis = _norm_axis(x, axis)
    y = np.moveaxis(K.softmax_lastdim(_move_last(x.data, axis)), -1, axis)

    def backward(gy):
        gx = K.softmax_lastdim_bwd(_move_last(y, axis), _move_last(gy, axis))
        return (np.moveaxis(gx, -1, axis),)

    return _result("softmax", y, (x,), backward)


def log_softmax(x, axis=-1):
    axis = _norm_axis(x, axis)
    y = np.moveaxis(K.log_softmax_lastdim(_move_last(x.data, axis)), -1, axis)

    def backward(gy):
        gx = K.log_softmax_lastdim_bwd(_move_last(y, axis), _move_last(gy, axis))
        return (np.moveaxis(gx, -1, axis),)

    return _result("log_softmax", y, (x,), backward)


# ---------------------------------------------------------------------------
# elementwise maps


def relu(x):
    data = K.relu_fwd(x.data)

    def backward(gy):
        return (K.relu_bwd(x.data, gy),)

    return _result("relu", data, (x,), backward)


def tanh(x):
    y = K.tanh_fwd(x.data)

    def backward(gy):
        return (K.tanh_bwd(y, gy),)

    return _result("tanh", y, (x,), backward)


def sigmoid(x):
    y = K.sigmoid_fwd(x.data)

    def backward(gy):
        return (K.sigmoid_bwd(y, gy),)

    return _result("sigmoid", y, (x,), backward)


def power(x, p):
    """Elementwise x**p for a constant exponent p."""
    p = float(p)
    data = K.power_fwd(x.data, p)

    def backward(gy):
        return (K.power_bwd(x.data, p, gy),)

    return _result("power", data, (x,), backward)


def scale(x, c):
    c = float(c)
    data = K.scale_fwd(x.data, c)

    def backward(gy):
        return (K.scale_fwd(gy, c),)

    return _result("scale", data, (x,), backward)


def shift(x, c):
    """Add a constant scalar."""
    data = x.data + x.data.dtype.type(c)

    def backward(gy):
        return (gy,)

    return _result("shift", data, (x,), backward)


def add(a, b):
    _check_same_dtype("add", a, b)
    out_shape = _leading_broadcast_shape("add", a.data.shape, b.data.shape)
    if a.data.shape == b.data.shape:
        data = K.add_fwd(a.data, b.data)
    else:
        data = np.ascontiguousarray(
            np.broadcast_to(a.data, out_shape) + np.broadcast_to(b.data, out_shape)
        )

    def backward(gy):
        ga = _unbroadcast(gy, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(gy, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result("add", data, (a, b), backward)


def mul(a, b):
    _check_same_dtype("mul", a, b)
    out_shape = _leading_broadcast_shape("mul", a.data.shape, b.data.shape)
    if a.data.shape == b.data.shape:
        data = K.mul_fwd(a.data, b.data)
    else:
        data = np.ascontiguousarray(
            np.broadcast_to(a.data, out_shape) * np.broadcast_to(b.data, out_shape)
        )

    def backward(gy):
        ga = _unbroadcast(gy * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(gy * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result("mul", data, (a, b), backward)


_ELEMENTWISE = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "add": add,
    "mul": mul,
    "scale": scale,
}


def elementwise(name, *args):
    """Dispatch by name over the supported elementwise family."""
    try:
        fn = _ELEMENTWISE[name]
    except KeyError:
        raise ValueError(f"unknown elementwise op {name!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(x, axis):
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"axis {axis} out of range for shape {x.data.shape}")
    return axis % nd


def tsum(x, axis, keepdims=False):
    axis = _norm_axis(x, axis)
    moved = _move_last(x.data, axis)
    reduced = K.sum_lastdim(moved)
    data = _reduced_to_output(reduced, x.data.shape, axis, keepdims)

    def backward(gy):
        g = _grad_to_reduced(gy, x.data.shape, axis, keepdims)
        gx = np.broadcast_to(g[..., None], moved.shape)
        return (np.moveaxis(gx, -1, axis).copy(),)

    return _result("sum", data, (x,), backward)


def mean(x, axis, keepdims=False):
    axis = _norm_axis(x, axis)
    n = x.data.shape[axis]
    if n == 0:
        raise ShapeError("mean over an empty axis")
    moved = _move_last(x.data, axis)
    reduced = K.mean_lastdim(moved)
    data = _reduced_to_output(reduced, x.data.shape, axis, keepdims)

    def backward(gy):
        g = _grad_to_reduced(gy, x.data.shape, axis, keepdims)
        gx = np.broadcast_to((g / n)[..., None], moved.shape)
        return (np.moveaxis(gx, -1, axis).copy(),)

    return _result("mean", data, (x,), backward)


def tmax(x, axis, keepdims=False):
    """Max along ``axis``; the gradient routes to the lowest argmax index."""
    axis = _norm_axis(x, axis)
    if x.data.shape[axis] == 0:
        raise ShapeError("max over an empty axis")
    moved = _move_last(x.data, axis)
    vals, idx = K.max_lastdim(moved)
    data = _reduced_to_output(vals, x.data.shape, axis, keepdims)

    def backward(gy):
        g = _grad_to_reduced(gy, x.data.shape, axis, keepdims)
        gx = K.max_lastdim_bwd(idx, _contig(g), moved.shape[-1])
        return (np.moveaxis(gx, -1, axis).copy(),)

    return _result("max", data, (x,), backward)


def _reduced_to_output(reduced, in_shape, axis, keepdims):
    # moveaxis preserves the relative order of the remaining axes, so the
    # reduced array already matches the input shape without `axis`.
    if keepdims:
        return np.expand_dims(reduced, axis)
    return reduced


def _grad_to_reduced(gy, in_shape, axis, keepdims):
    if keepdims:
        return _contig(np.squeeze(gy, axis=axis))
    return _contig(gy)


_REDUCE = {"mean": mean, "max": tmax, "sum": tsum}


def reduce(name, x, axis, keepdims=False):
    """Dispatch by name over the supported reductions."""
    try:
        fn = _REDUCE[name]
    except KeyError:
        raise ValueError(f"unknown reduce op {name!r}") from None
    return fn(x, axis, keepdims)


# ---------------------------------------------------------------------------
# structural ops


def reshape(x, shape):
    data = x.data.reshape(shape)

    def backward(gy):
        return (gy.reshape(x.data.shape),)

    return _result("reshape", data, (x,), backward)


def transpose(x, axes):
    axes = tuple(axes)
    data = np.ascontiguousarray(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def backward(gy):
        return (np.ascontiguousarray(np.transpose(gy, inverse)),)

    return _result("transpose", data, (x,), backward)


def narrow(x, axis, start, length):
    """Contiguous slice of ``length`` entries along ``axis``."""
    axis = _norm_axis(x, axis)
    if start < 0 or start + length > x.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] exceeds axis {axis} of shape {x.data.shape}"
        )
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = np.ascontiguousarray(x.data[index])

    def backward(gy):
        gx = np.zeros_like(x.data)
        gx[index] = gy
        return (gx,)

    return _result("narrow", data, (x,), backward)


def concat(tensors, axis):
    tensors = tuple(tensors)
    _check_same_dtype("concat", *tensors)
    axis = _norm_axis(tensors[0], axis)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(gy):
        grads = []
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * gy.ndim
                index[axis] = slice(offset, offset + size)
                grads.append(np.ascontiguousarray(gy[tuple(index)]))
            else:
                grads.append(None)
            offset += size
        return grads

    return _result("concat", data, tensors, backward)


def expand(x, axis, n):
    """Materialize ``n`` copies along a size-1 axis (explicit broadcast)."""
    axis = _norm_axis(x, axis)
    if x.data.shape[axis] != 1:
        raise ShapeError(f"expand requires size 1 along axis {axis}, got {x.data.shape}")
    data = np.ascontiguousarray(np.repeat(x.data, n, axis=axis))

    def backward(gy):
        return (gy.sum(axis=axis, keepdims=True),)

    return _result("expand", data, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, leaves, eps=1e-4, tol=None):
    """Compare analytic gradients of a scalar-valued ``f`` against central
    finite differences and return the worst relative error.

    ``leaves`` are the tensors to differentiate with respect to; every leaf
    with ``requires_grad=True`` must be float64 (the whole evaluation runs
    in double precision to leave headroom under the check tolerance). ``f``
    is called as ``f(*leaves)`` and must rebuild its graph from exactly
    these tensor objects on every call.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-3)``. If
    ``tol`` is given, a worst error above it raises ``ValueError``.
    """
    leaves = tuple(leaves)
    grad_leaves = [t for t in leaves if t.requires_grad]
    for t in grad_leaves:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check requires float64 leaves")
        t.grad = None

    out = f(*leaves)
    if out.data.size != 1:
        raise ShapeError("grad_check target must be scalar-valued")
    out.backward()
    analytic = [
        (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for t in grad_leaves
    ]

    worst = 0.0
    for t, a in zip(grad_leaves, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*leaves).data)
            flat[i] = orig - eps
            fm = float(f(*leaves).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-3)
            if err > worst:
                worst = err
    if tol is not None and worst > tol:
        raise ValueError(f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}")
    return worst
