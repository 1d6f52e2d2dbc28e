"""Minimal dense-tensor arithmetic with reverse-mode differentiation.

A Tensor wraps a float64 numpy buffer plus a ``requires_grad`` flag. Ops
link results to their inputs, forming an implicit DAG; ``backward`` on a
scalar walks that DAG once in reverse topological order and accumulates
gradients into the leaves. A graph is single-use: running backward twice
without re-running the forward pass raises.

Forward numerics are plain numpy, so individual graphs are single-threaded
but independent graphs can run concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphConsumed, NotScalar, ShapeError


class Tensor:
    """Dense float64 tensor participating in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn",
                 "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    # Operator sugar; every overload routes through the op functions below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires_grad leaf reachable from loss."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphConsumed("backward already ran on this graph; re-run forward")
    if not loss.requires_grad:
        loss._consumed = True
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is not None:
            for parent, pg in node._backward_fn(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._backward_fn = None
            node._consumed = True
        else:
            node.grad = g if node.grad is None else node.grad + g
    loss._consumed = True


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(g, b.data.shape)))

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(-g, b.data.shape)))

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))

    return _make(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bw(g):
        return ((a, _unbroadcast(g / b.data, a.data.shape)),
                (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))

    return _make(data, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    data = a.data ** e

    def bw(g):
        return ((a, g * e * a.data ** (e - 1.0)),)

    return _make(data, (a,), bw)


def sqrt(a, eps: float = 1e-12) -> Tensor:
    """Square root with the gradient bounded near zero (subgradient 0 at 0)."""
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def bw(g):
        return ((a, g / (2.0 * np.maximum(data, eps))),)

    return _make(data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bw(g):
        return ((a, g * (a.data > 0.0)),)

    return _make(data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    expx = np.exp(a.data[~pos])
    data[~pos] = expx / (1.0 + expx)

    def bw(g):
        return ((a, g * data * (1.0 - data)),)

    return _make(data, (a,), bw)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    return _make(data, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def softmax(a) -> Tensor:
    """Softmax over the last axis; rows sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return ((a, data * (g - dot)),)

    return _make(data, (a,), bw)


def l2_normalize(a, eps: float = 1e-12) -> Tensor:
    """Normalize last-axis rows to unit length; rows below eps map to zero."""
    a = as_tensor(a)
    norm = np.linalg.norm(a.data, axis=-1, keepdims=True)
    safe = norm > eps
    denom = np.where(safe, norm, 1.0)
    data = np.where(safe, a.data / denom, 0.0)

    def bw(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        gx = np.where(safe, (g - data * dot) / denom, 0.0)
        return ((a, gx),)

    return _make(data, (a,), bw)


def logsumexp(a, axis=None) -> Tensor:
    """Overflow-safe log-sum-exp; axis=None reduces to a scalar."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    data = (m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True)))
    weights = np.exp(a.data - data)
    if axis is None:
        data = data.reshape(())
    else:
        data = data.squeeze(axis=axis)

    def bw(g):
        g = np.asarray(g)
        if axis is None:
            return ((a, weights * g),)
        return ((a, weights * np.expand_dims(g, axis)),)

    return _make(data, (a,), bw)


def mse(a, b) -> Tensor:
    """Mean squared error over all entries; scalar output."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse shapes differ: {a.data.shape} vs {b.data.shape}")
    d = sub(a, b)
    return tmean(mul(d, d))


# ---------------------------------------------------------------------------
# shape and contraction ops
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bw(g):
        return ((a, g.reshape(a.data.shape)),)

    return _make(data, (a,), bw)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bw(g):
        return ((a, g.transpose(inv)),)

    return _make(data, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dims")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.data.shape)),
                (b, _unbroadcast(gb, b.data.shape)))

    return _make(data, (a, b), bw)


def einsum_3d(a, b) -> Tensor:
    """s[v, m, n] = sum_d a[v, m, d] * b[v, n, d]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError("einsum_3d expects rank-3 operands")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[2]:
        raise ShapeError(
            f"einsum_3d batch/feature dims differ: {a.data.shape} vs {b.data.shape}")
    data = np.einsum("vmd,vnd->vmn", a.data, b.data)

    def bw(g):
        return ((a, np.einsum("vmn,vnd->vmd", g, b.data)),
                (b, np.einsum("vmn,vmd->vnd", g, a.data)))

    return _make(data, (a, b), bw)


def index_rows(a, index: np.ndarray) -> Tensor:
    """Select rows along axis 0; duplicate indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("index_rows expects a 1-D index array")
    data = a.data[idx]

    def bw(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return ((a, gx),)

    return _make(data, (a,), bw)


def take(a, flat_index: np.ndarray) -> Tensor:
    """1-D gather over the flattened tensor (used to select masked entries)."""
    a = as_tensor(a)
    idx = np.asarray(flat_index, dtype=np.int64)
    data = a.data.ravel()[idx]

    def bw(g):
        gx = np.zeros(a.data.size)
        np.add.at(gx, idx, g)
        return ((a, gx.reshape(a.data.shape)),)

    return _make(data, (a,), bw)


def gather_last(a, index: np.ndarray) -> Tensor:
    """y[..., k] = a[..., k, index[..., k]]; indices are constants."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != a.data.shape[:-1]:
        raise ShapeError(
            f"gather index shape {idx.shape} != leading dims {a.data.shape[:-1]}")
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros_like(a.data)
        flat = gx.reshape(-1, a.data.shape[-1])
        rows = np.arange(flat.shape[0])
        np.add.at(flat, (rows, idx.reshape(-1)), g.reshape(-1))
        return ((a, gx),)

    return _make(data, (a,), bw)


# ---------------------------------------------------------------------------
# rigid-alignment op
# ---------------------------------------------------------------------------


def svd_rotation(h) -> Tensor:
    """Nearest proper rotation to the cross-covariance H via SVD.

    R = V diag(1, 1, det(V U^T)) U^T for H = U S V^T, so det(R) = +1 even
    in reflection cases. The backward pass differentiates through the SVD
    treating the determinant sign as locally constant.
    """
    h = as_tensor(h)
    if h.data.shape != (3, 3):
        raise ShapeError(f"svd_rotation expects a 3x3 matrix, got {h.data.shape}")
    u, s, vt = np.linalg.svd(h.data)
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    dvec = np.array([1.0, 1.0, d])
    data = v @ np.diag(dvec) @ u.T

    def bw(g):
        # Split the loss gradient on R into gradients on U and V.
        gu = g.T @ v @ np.diag(dvec)
        gv = g @ u @ np.diag(dvec)
        s2 = s * s
        diff = s2[None, :] - s2[:, None]
        # Regularized 1/diff: caps the amplification when singular values
        # nearly coincide, which otherwise produces unusable gradients.
        f = diff / (diff * diff + 1e-8)
        np.fill_diagonal(f, 0.0)
        ju = f * (u.T @ gu - gu.T @ u)
        jv = f * (v.T @ gv - gv.T @ v)
        gh = u @ (ju @ np.diag(s) + np.diag(s) @ jv) @ vt
        return ((h, gh),)

    return _make(data, (h,), bw)
