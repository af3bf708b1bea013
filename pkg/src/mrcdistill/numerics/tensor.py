"""Dense float64 tensors with a reverse-mode tape.

A :class:`Tensor` wraps a C-contiguous ``float64`` ndarray. Operations on
tensors that require grad record a node (parents + a backward closure) on the
output; :func:`backward` walks those nodes in reverse topological order.
Leaf gradients accumulate until :func:`zero_grad` is called.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K

MASK_FILL = -1e30


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class NumericError(FloatingPointError):
    """A computation produced NaN or infinity."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: BackwardFn | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return scale(self, 1.0 / float(c))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, float(x)))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap an op result, registering it on the tape if any parent needs grad.

    ``backward(g)`` returns one gradient (or ``None``) per parent.
    """
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


# -------------------------------------------------------------------- tape


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every grad-requiring leaf reachable from ``root``."""
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------- elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1,):
        return np.array([g.sum()])
    return g.reshape((-1,) + shape).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum.

    ``b`` may also match a trailing suffix of ``a``'s shape (bias-add) or be a
    one-element ``(1,)`` tensor.
    """
    if a.shape != b.shape and a.shape[a.ndim - b.ndim :] != b.shape and b.shape != (1,):
        raise DimensionError(f"add: shape {b.shape} does not broadcast onto {a.shape}")
    sb = b.shape
    return make_node(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient flows through clamped entries."""
    ad = a.data
    clipped = np.maximum(ad, floor) if floor > 0.0 else ad
    live = ad >= floor if floor > 0.0 else None

    def bw(g):
        out = g / clipped
        return (out if live is None else np.where(live, out, 0.0),)

    return make_node(np.log(clipped), (a,), bw, "log")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``0.5 x (1 + erf(x / sqrt 2))``."""
    xd = x.data
    out, cdf = K.gelu_fwd(xd)
    return make_node(out, (x,), lambda g: (K.gelu_bwd(xd, cdf, np.ascontiguousarray(g)),), "gelu")


# -------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_node(
        np.array(x.data.sum() / n), (x,), lambda g: (np.full(shape, float(g) / n),), "mean"
    )


def sum_last(x: Tensor) -> Tensor:
    """Sum over the last axis."""
    shape = x.shape
    return make_node(
        x.data.sum(axis=-1),
        (x,),
        lambda g: (np.broadcast_to(g[..., None], shape).copy(),),
        "sum_last",
    )


def dot_last(x: Tensor, w: Tensor) -> Tensor:
    """``sum_k x[..., k] * w[k]``.

    Each output depends only on its own row, so results do not change with
    batch size (unlike a BLAS matrix-vector product).
    """
    if w.ndim != 1 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"dot_last: {x.shape} with {w.shape}")
    xd, wd = x.data, w.data
    d = wd.shape[0]

    def bw(g):
        g1 = g[..., None]
        return (g1 * wd, (g1 * xd).reshape(-1, d).sum(axis=0))

    return make_node((xd * wd).sum(axis=-1), (x, w), bw, "dot_last")


# ------------------------------------------------------------------ shapes


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return make_node(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def index(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing."""
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out[key] += g
        return (out,)

    return make_node(np.ascontiguousarray(x.data[key]), (x,), bw, "index")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    n = len(xs)

    def bw(g):
        return [np.ascontiguousarray(np.take(g, i, axis=axis)) for i in range(n)]

    return make_node(np.stack([x.data for x in xs], axis=axis), tuple(xs), bw, "stack")


def gather_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """``x[b, rows[b, j], :]`` for a 3-D ``x`` and integer ``rows`` of shape (B, n)."""
    rows = np.asarray(rows, dtype=np.int64)
    if x.ndim != 3 or rows.ndim != 2 or rows.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_rows: x {x.shape} with rows {rows.shape}")
    bidx = np.arange(x.shape[0])[:, None]
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, (np.broadcast_to(bidx, rows.shape), rows), g)
        return (out,)

    return make_node(x.data[bidx, rows], (x,), bw, "gather_rows")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return make_node(table.data[ids], (table,), bw, "embedding")


# ------------------------------------------------------------------ linalg


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a (..., m, k)`` and ``b (k, n)`` or ``b (..., k, n)``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    if b.ndim == 2 and a.ndim > 2:
        k = a.shape[-1]
        out = (ad.reshape(-1, k) @ bd).reshape(a.shape[:-1] + (bd.shape[1],))

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g @ bd.T, ad.reshape(-1, k).T @ g2)

    else:
        out = ad @ bd

        def bw(g):
            return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return make_node(out, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ------------------------------------------------------------ fused layers


def softmax_rows(x: Tensor, mask_add: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with max subtraction.

    ``mask_add`` is a constant array broadcast onto ``x`` before the softmax;
    entries of :data:`MASK_FILL` receive exactly zero probability.
    """
    if x.shape[-1] < 1:
        raise DimensionError("softmax_rows needs a non-empty last axis")
    z = x.data if mask_add is None else x.data + mask_add
    p = K.softmax_fwd(np.ascontiguousarray(z))
    return make_node(p, (x,), lambda g: (K.softmax_bwd(p, np.ascontiguousarray(g)),), "softmax")


def attention(qkv: Tensor, n_heads: int, mask_add: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product self-attention over a packed projection.

    ``qkv`` is (B, L, 3d) holding the query, key and value projections side by
    side; the result is the (B, L, d) context with heads concatenated.
    """
    if qkv.ndim != 3 or qkv.shape[-1] % (3 * n_heads):
        raise DimensionError(f"attention: qkv {qkv.shape} with {n_heads} heads")
    B, L, d3 = qkv.shape
    d = d3 // 3
    dh = d // n_heads
    c = 1.0 / np.sqrt(dh)
    heads = qkv.data.reshape(B, L, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = heads[0] * c, heads[1], heads[2]
    z = q @ k.transpose(0, 1, 3, 2)
    if mask_add is not None:
        z = z + mask_add
    p = K.softmax_fwd(np.ascontiguousarray(z))
    ctx = (p @ v).transpose(0, 2, 1, 3).reshape(B, L, d)

    def bw(g):
        gc = g.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)
        dp = gc @ v.transpose(0, 1, 3, 2)
        dz = K.softmax_bwd(p, np.ascontiguousarray(dp))
        out = np.empty((3, B, n_heads, L, dh))
        out[0] = (dz @ k) * c
        out[1] = dz.transpose(0, 1, 3, 2) @ q
        out[2] = p.transpose(0, 1, 3, 2) @ gc
        return (out.transpose(1, 3, 0, 2, 4).reshape(B, L, d3),)

    return make_node(np.ascontiguousarray(ctx), (qkv,), bw, "attention")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit (1/d) variance, then ``gamma * . + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs d={d}")
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    y, xhat, rstd = K.layer_norm_fwd(x.data, gamma.data, beta.data, eps)
    gd = gamma.data

    def bw(g):
        return K.layer_norm_bwd(np.ascontiguousarray(g), xhat, rstd, gd)

    return make_node(y, (x, gamma, beta), bw, "layer_norm")
