"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records operations in execution order while it is active; the
backward pass replays the records in exact reverse insertion order (which is
a valid topological order for a define-by-run graph). Tapes are rebuilt per
training step and never shared between threads.

Shape discipline: elementwise ops require equal shapes or a scalar (shape
``()``) operand; there is no implicit broadcasting beyond that. Row-vector
alignment is explicit via :func:`add_rowvec`, slicing/stacking via the
``*_cols`` ops. All values are float64; ops do not verify finiteness except
where their error contract says so (``log`` raises on non-positive input),
so overflow surfaces at the consumer that requires finite values.
"""
import numpy as np

from .errors import DomainError, ShapeError
from .kernels import active as _K

_ACTIVE_TAPE = None


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``grad`` is filled by :meth:`Tape.backward`; for leaves created with
    ``requires_grad=True`` it persists and accumulates until zeroed.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._tracked = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the common elementwise cases
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)


def constant(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value):
    return Tensor(value, requires_grad=True)


class Node:
    """One recorded operation: output, parent references, backward rule."""

    __slots__ = ("kind", "out", "parents", "bwd")

    def __init__(self, kind, out, parents, bwd):
        self.kind = kind
        self.out = out
        self.parents = parents
        self.bwd = bwd


class Tape:
    """Ordered record of operations; context manager activates recording."""

    def __init__(self):
        self.nodes = []
        self._spent = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, root):
        """Fill grads of everything that influenced the scalar ``root``."""
        if root.shape != ():
            raise ShapeError(f"backward root must be scalar, got {root.shape}")
        if not root._tracked:
            raise ShapeError("backward root was not produced on this tape")
        if self._spent:
            raise RuntimeError("tape already backpropagated")
        self._spent = True
        root.grad = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes):
            gout = node.out.grad
            if gout is None:
                continue
            node.bwd(gout)


def _needs(t):
    return t.requires_grad or t._tracked


def _accum(t, delta):
    if t.grad is None:
        t.grad = np.zeros(t.shape, dtype=np.float64)
    t.grad += delta


def _grad_buf(t):
    if t.grad is None:
        t.grad = np.zeros(t.shape, dtype=np.float64)
    return t.grad


def _record(kind, out, parents, bwd):
    if _ACTIVE_TAPE is not None and any(_needs(p) for p in parents):
        out._tracked = True
        _ACTIVE_TAPE.nodes.append(Node(kind, out, parents, bwd))
    return out


def _binary_shapes(a, b, op):
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} need to match "
                     "(or one operand must be scalar)")


def _reduce_to(shape, delta):
    # adjoint of scalar-with-tensor broadcast
    return delta.sum() if shape == () and np.shape(delta) != () else delta


# ---------------------------------------------------------------------------
# elementwise binary ops

def add(a, b):
    a, b = constant(a), constant(b)
    _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        if _needs(a):
            _accum(a, _reduce_to(a.shape, g))
        if _needs(b):
            _accum(b, _reduce_to(b.shape, g))
    return _record("add", out, (a, b), bwd)


def sub(a, b):
    a, b = constant(a), constant(b)
    _binary_shapes(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        if _needs(a):
            _accum(a, _reduce_to(a.shape, g))
        if _needs(b):
            _accum(b, _reduce_to(b.shape, -g))
    return _record("sub", out, (a, b), bwd)


def mul(a, b):
    a, b = constant(a), constant(b)
    _binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        if _needs(a):
            _accum(a, _reduce_to(a.shape, g * b.data))
        if _needs(b):
            _accum(b, _reduce_to(b.shape, g * a.data))
    return _record("mul", out, (a, b), bwd)


def affine(x, a, b):
    """a ⊙ x + b with a, b matching x's shape or scalar."""
    x, a, b = constant(x), constant(a), constant(b)
    _binary_shapes(x, a, "affine(scale)")
    _binary_shapes(x, b, "affine(shift)")
    out = Tensor(a.data * x.data + b.data)

    def bwd(g):
        if _needs(x):
            _accum(x, _reduce_to(x.shape, g * a.data))
        if _needs(a):
            _accum(a, _reduce_to(a.shape, g * x.data))
        if _needs(b):
            _accum(b, _reduce_to(b.shape, g))
    return _record("affine", out, (x, a, b), bwd)


# ---------------------------------------------------------------------------
# elementwise unary ops (kernel-backed)

def neg(x):
    x = constant(x)
    out = Tensor(-x.data)

    def bwd(g):
        if _needs(x):
            _accum(x, -g)
    return _record("neg", out, (x,), bwd)


def exp(x):
    x = constant(x)
    out = Tensor(_K.exp(x.data))

    def bwd(g):
        if _needs(x):
            _K.exp_bwd(out.data, g, _grad_buf(x))
    return _record("exp", out, (x,), bwd)


def log(x):
    x = constant(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log of non-positive value")
    out = Tensor(_K.log(x.data))

    def bwd(g):
        if _needs(x):
            _K.log_bwd(x.data, g, _grad_buf(x))
    return _record("log", out, (x,), bwd)


def sigmoid(x):
    x = constant(x)
    out = Tensor(_K.sigmoid(x.data))

    def bwd(g):
        if _needs(x):
            _K.sigmoid_bwd(out.data, g, _grad_buf(x))
    return _record("sigmoid", out, (x,), bwd)


def log_sigmoid(x):
    x = constant(x)
    out = Tensor(_K.log_sigmoid(x.data))

    def bwd(g):
        if _needs(x):
            _K.log_sigmoid_bwd(x.data, g, _grad_buf(x))
    return _record("log_sigmoid", out, (x,), bwd)


def softplus(x):
    x = constant(x)
    out = Tensor(_K.softplus(x.data))

    def bwd(g):
        if _needs(x):
            _K.softplus_bwd(x.data, g, _grad_buf(x))
    return _record("softplus", out, (x,), bwd)


def tanh(x):
    x = constant(x)
    out = Tensor(_K.tanh(x.data))

    def bwd(g):
        if _needs(x):
            _K.tanh_bwd(out.data, g, _grad_buf(x))
    return _record("tanh", out, (x,), bwd)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only through unclamped entries."""
    x = constant(x)
    out = Tensor(np.clip(x.data, lo, hi))

    def bwd(g):
        if _needs(x):
            inside = (x.data > lo) & (x.data < hi)
            _accum(x, g * inside)
    return _record("clip", out, (x,), bwd)


# ---------------------------------------------------------------------------
# matrix ops

def _as2d(arr, side):
    # promote 1-D operands so matmul is always (M,K)@(K,N)
    if arr.ndim == 1:
        return (arr[None, :], True) if side == "left" else (arr[:, None], True)
    if arr.ndim == 2:
        return arr, False
    raise ShapeError(f"matmul operands must be 1-D or 2-D, got {arr.ndim}-D")


def matmul(a, b):
    a, b = constant(a), constant(b)
    a2, a_promoted = _as2d(a.data, "left")
    b2, b_promoted = _as2d(b.data, "right")
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    res = a2 @ b2
    if a_promoted:
        res = res[0]
    if b_promoted:
        res = res[..., 0]
    out = Tensor(res)

    def bwd(g):
        g2 = g
        if a_promoted:
            g2 = g2[None, ...]
        if b_promoted:
            g2 = g2[..., None]
        if _needs(a):
            da = g2 @ b2.T
            _accum(a, da[0] if a_promoted else da)
        if _needs(b):
            db = a2.T @ g2
            _accum(b, db[..., 0] if b_promoted else db)
    return _record("matmul", out, (a, b), bwd)


def masked_matmul(x, w, mask):
    """x @ (w ⊙ mask) with a fixed binary mask on the weight."""
    x, w = constant(x), constant(w)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    if mask.shape != w.shape:
        raise ShapeError(f"mask shape {mask.shape} != weight shape {w.shape}")
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"masked_matmul: {x.shape} @ {w.shape}")
    wm = w.data * mask
    out = Tensor(x.data @ wm)

    def bwd(g):
        if _needs(x):
            _accum(x, g @ wm.T)
        if _needs(w):
            _accum(w, (x.data.T @ g) * mask)
    return _record("masked_matmul", out, (x, w), bwd)


def transpose(x):
    x = constant(x)
    if x.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    out = Tensor(x.data.T)

    def bwd(g):
        if _needs(x):
            _accum(x, g.T)
    return _record("transpose", out, (x,), bwd)


def diag_embed(v):
    v = constant(v)
    if v.ndim != 1:
        raise ShapeError("diag_embed expects a 1-D tensor")
    out = Tensor(np.diag(v.data))

    def bwd(g):
        if _needs(v):
            _accum(v, np.diagonal(g).copy())
    return _record("diag_embed", out, (v,), bwd)


def add_rowvec(x, b):
    """x[i, :] + b for every row i; the explicit bias-alignment op."""
    x, b = constant(x), constant(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_rowvec: {x.shape} + {b.shape}")
    out = Tensor(x.data + b.data[None, :])

    def bwd(g):
        if _needs(x):
            _accum(x, g)
        if _needs(b):
            _accum(b, g.sum(axis=0))
    return _record("add_rowvec", out, (x, b), bwd)


# ---------------------------------------------------------------------------
# shape / layout ops

def slice_cols(x, j0, j1):
    x = constant(x)
    if x.ndim != 2 or not (0 <= j0 <= j1 <= x.shape[1]):
        raise ShapeError(f"slice_cols [{j0}:{j1}] of {x.shape}")
    out = Tensor(x.data[:, j0:j1])

    def bwd(g):
        if _needs(x):
            buf = _grad_buf(x)
            buf[:, j0:j1] += g
    return _record("slice_cols", out, (x,), bwd)


def concat_cols(parts):
    parts = [constant(p) for p in parts]
    if not parts or any(p.ndim != 2 for p in parts):
        raise ShapeError("concat_cols expects a non-empty list of 2-D tensors")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols: row counts differ")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]

    def bwd(g):
        j = 0
        for p, w in zip(parts, widths):
            if _needs(p):
                _accum(p, g[:, j:j + w])
            j += w
    return _record("concat_cols", out, tuple(parts), bwd)


def permute_cols(x, perm):
    x = constant(x)
    perm = np.asarray(perm, dtype=np.intp)
    if x.ndim != 2 or sorted(perm.tolist()) != list(range(x.shape[1])):
        raise ShapeError(f"permute_cols: {perm} on {x.shape}")
    out = Tensor(x.data[:, perm])

    def bwd(g):
        if _needs(x):
            buf = _grad_buf(x)
            buf[:, perm] += g
    return _record("permute_cols", out, (x,), bwd)


def repeat_rows(x, k):
    """Repeat each row k times: (B, F) -> (B*k, F), rows grouped per source."""
    x = constant(x)
    if x.ndim != 2 or k < 1:
        raise ShapeError(f"repeat_rows(k={k}) on {x.shape}")
    out = Tensor(np.repeat(x.data, k, axis=0))
    rows, cols = x.shape

    def bwd(g):
        if _needs(x):
            _accum(x, g.reshape(rows, k, cols).sum(axis=1))
    return _record("repeat_rows", out, (x,), bwd)


def reshape(x, shape):
    x = constant(x)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape {x.shape} -> {shape}")
    out = Tensor(x.data.reshape(shape))
    orig = x.shape

    def bwd(g):
        if _needs(x):
            _accum(x, g.reshape(orig))
    return _record("reshape", out, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions

def _check_axis(x, axis, op):
    if not (0 <= axis < x.ndim):
        raise ShapeError(f"{op}: axis {axis} out of range for {x.shape}")
    if x.shape[axis] == 0:
        raise ShapeError(f"{op}: empty axis {axis}")


def sum_over_axis(x, axis):
    x = constant(x)
    _check_axis(x, axis, "sum_over_axis")
    out = Tensor(x.data.sum(axis=axis))

    def bwd(g):
        if _needs(x):
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))
    return _record("sum_over_axis", out, (x,), bwd)


def logsumexp(x, axis):
    """log Σ exp along ``axis`` via max-shift; overflow-safe."""
    x = constant(x)
    _check_axis(x, axis, "logsumexp")
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = np.exp(x.data - m)
    out = Tensor(np.squeeze(m, axis=axis) + np.log(shifted.sum(axis=axis)))

    def bwd(g):
        if _needs(x):
            soft = shifted / shifted.sum(axis=axis, keepdims=True)
            _accum(x, np.expand_dims(g, axis) * soft)
    return _record("logsumexp", out, (x,), bwd)


def max_over_axis(x, axis):
    """Max along ``axis``; gradient flows to the first (lowest-index) argmax."""
    x = constant(x)
    _check_axis(x, axis, "max_over_axis")
    idx = np.argmax(x.data, axis=axis)
    out = Tensor(np.max(x.data, axis=axis))

    def bwd(g):
        if _needs(x):
            buf = _grad_buf(x)
            grid = np.indices(idx.shape)
            slicer = list(grid)
            slicer.insert(axis, idx)
            buf[tuple(slicer)] += g
    return _record("max_over_axis", out, (x,), bwd)


# ---------------------------------------------------------------------------
# generic dispatch (used by the kind-exhaustive gradient checks)

OP_KINDS = {
    "add": add, "sub": sub, "mul": mul, "neg": neg, "affine": affine,
    "exp": exp, "log": log, "sigmoid": sigmoid, "log_sigmoid": log_sigmoid,
    "softplus": softplus, "tanh": tanh, "clip": clip,
    "matmul": matmul, "masked_matmul": masked_matmul,
    "transpose": transpose, "diag_embed": diag_embed,
    "add_rowvec": add_rowvec, "slice_cols": slice_cols,
    "concat_cols": concat_cols, "permute_cols": permute_cols,
    "repeat_rows": repeat_rows, "reshape": reshape,
    "sum_over_axis": sum_over_axis, "logsumexp": logsumexp,
    "max_over_axis": max_over_axis,
}


def forward_op(kind, *args, **kwargs):
    if kind not in OP_KINDS:
        raise ShapeError(f"unknown op kind {kind!r}")
    return OP_KINDS[kind](*args, **kwargs)
