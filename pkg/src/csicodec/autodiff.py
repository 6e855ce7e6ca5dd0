"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor records the op that produced it and its parents; backward() does a
topological sweep accumulating gradients into .grad.  Everything is float64.
Only the ops the transforms and the rate term need are implemented.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    if grad.shape == shape:
        return grad
    # collapse extra leading axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # collapse broadcast singleton axes
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    # -- graph construction helpers -------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _accumulate(self, g: np.ndarray, fresh: bool = False):
        """Add g into grad.  fresh=True promises g is a newly allocated array
        owned by the caller, so the first accumulation can keep it without a
        defensive copy."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g if fresh else np.array(g)
        else:
            self.grad += g

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)

        def backward(g):
            ga = _unbroadcast(g, self.shape)
            self._accumulate(ga, fresh=ga is not g)
            gb = _unbroadcast(g, other.shape)
            other._accumulate(gb, fresh=gb is not g)

        return Tensor._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g, fresh=True)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other):
        other = Tensor._lift(other)

        def backward(g):
            ga = _unbroadcast(g, self.shape)
            self._accumulate(ga, fresh=ga is not g)
            other._accumulate(_unbroadcast(-g, other.shape), fresh=True)

        return Tensor._make(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape), fresh=True)
            other._accumulate(_unbroadcast(g * self.data, other.shape), fresh=True)

        return Tensor._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape), fresh=True)
            other._accumulate(
                _unbroadcast(-g * self.data / (other.data**2), other.shape), fresh=True
            )

        return Tensor._make(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, exponent: float):
        e = float(exponent)
        d = self.data
        if e == 2.0:
            out, dfn = d * d, lambda: 2.0 * d
        elif e == 3.0:
            out, dfn = d * d * d, lambda: 3.0 * d * d
        elif e == 0.5:
            root = np.sqrt(d)
            out, dfn = root, lambda: 0.5 / root
        elif e == -0.5:
            root = np.sqrt(d)
            out, dfn = 1.0 / root, lambda: -0.5 / (root * d)
        else:
            out, dfn = d**e, lambda: e * d ** (e - 1.0)

        def backward(g):
            self._accumulate(g * dfn(), fresh=True)

        return Tensor._make(out, (self,), backward)

    def __matmul__(self, other):
        other = Tensor._lift(other)

        def backward(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            self._accumulate(_unbroadcast(ga, self.shape), fresh=True)
            if other.data.ndim == 2 and g.ndim > 2:
                # shared weight: flatten the batch axes instead of building a
                # batched gradient and reducing it afterwards
                k = self.data.shape[-1]
                m = g.shape[-1]
                gb = self.data.reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = _unbroadcast(
                    np.swapaxes(self.data, -1, -2) @ g, other.shape
                )
            other._accumulate(gb, fresh=True)

        return Tensor._make(self.data @ other.data, (self, other), backward)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def backward(g):
            self._accumulate(g.reshape(old), fresh=True)

        return Tensor._make(self.data.reshape(shape), (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inv), fresh=True)

        return Tensor._make(self.data.transpose(axes), (self,), backward)

    def __getitem__(self, idx):
        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(p, (slice, int, type(...))) for p in parts)

        def backward(g):
            full = np.zeros_like(self.data)
            if basic:  # basic indexing never repeats an element
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            self._accumulate(full, fresh=True)

        return Tensor._make(self.data[idx], (self,), backward)

    def roll(self, shift, axis):
        def backward(g):
            self._accumulate(
                np.roll(g, tuple(-s for s in shift) if isinstance(shift, tuple) else -shift, axis),
                fresh=True,
            )

        return Tensor._make(np.roll(self.data, shift, axis), (self,), backward)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy(), fresh=True)
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy(), fresh=True)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- backward driver -----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order = []
        seen = set()

        def visit(node):
            stack = [(node, iter(node._parents))]
            seen.add(id(node))
            while stack:
                cur, it = stack[-1]
                advanced = False
                for p in it:
                    if id(p) not in seen and p.requires_grad:
                        seen.add(id(p))
                        stack.append((p, iter(p._parents)))
                        advanced = True
                        break
                if not advanced:
                    order.append(cur)
                    stack.pop()

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


# -- elementwise functions (work on Tensor, keep the graph) ----------------


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data, fresh=True)

    return Tensor._make(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g / x.data, fresh=True)

    return Tensor._make(np.log(x.data), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - t * t), fresh=True)

    return Tensor._make(t, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # evaluate on the negative half-line only, where exp cannot overflow
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        x._accumulate(g * s * (1.0 - s), fresh=True)

    return Tensor._make(s, (x,), backward)


def clip_min(x: Tensor, floor: float) -> Tensor:
    mask = x.data > floor

    def backward(g):
        x._accumulate(g * mask, fresh=True)

    return Tensor._make(np.maximum(x.data, floor), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)), fresh=True)

    return Tensor._make(s, (x,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU as one fused op."""
    d = x.data
    t = np.tanh(_GELU_C * (d + _GELU_A * d * d * d))

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * d * d)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du), fresh=True)

    return Tensor._make(0.5 * d * (1.0 + t), (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale and shift.  Fused op with the
    standard closed-form backward."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    centered = d - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        beta._accumulate(g.sum(axis=reduce_axes), fresh=True)
        gamma._accumulate((g * xhat).sum(axis=reduce_axes), fresh=True)
        dxhat = g * gamma.data
        x._accumulate(
            inv_std
            * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            ),
            fresh=True,
        )

    return Tensor._make(out, (x, gamma, beta), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b as one fused op (w is 2-D, b is 1-D)."""
    out = x.data @ w.data + b.data

    def backward(g):
        x._accumulate(g @ w.data.T, fresh=True)
        k = x.data.shape[-1]
        m = g.shape[-1]
        w._accumulate(x.data.reshape(-1, k).T @ g.reshape(-1, m), fresh=True)
        b._accumulate(g.reshape(-1, m).sum(axis=0), fresh=True)

    return Tensor._make(out, (x, w, b), backward)


def window_attention_qkv(qkv: Tensor, heads: int) -> Tensor:
    """Multi-head scaled-dot-product attention within windows, fused.

    qkv is (B, nW, T, 3d) with the last axis packed as [q | k | v]; the
    result is (B, nW, T, d).  Splitting, head reshapes, softmax, and both
    matmuls happen in plain numpy with one hand-written backward.
    """
    b, nw, t, d3 = qkv.shape
    d = d3 // 3
    dh = d // heads
    scale = dh**-0.5

    def split_heads(z):
        return z.reshape(b, nw, t, heads, dh).transpose(0, 1, 3, 2, 4)

    data = qkv.data
    q = split_heads(data[..., :d])
    k = split_heads(data[..., d : 2 * d])
    v = split_heads(data[..., 2 * d :])
    s = (q @ k.swapaxes(-1, -2)) * scale
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    p = s  # (B, nW, h, T, T) attention weights
    out = (p @ v).transpose(0, 1, 3, 2, 4).reshape(b, nw, t, d)

    def merge_heads(z):
        return z.transpose(0, 1, 3, 2, 4).reshape(b, nw, t, d)

    def backward(g):
        go = split_heads(g)
        dv = p.swapaxes(-1, -2) @ go
        dp = go @ v.swapaxes(-1, -2)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.swapaxes(-1, -2) @ q
        dqkv = np.concatenate(
            [merge_heads(dq), merge_heads(dk), merge_heads(dv)], axis=-1
        )
        qkv._accumulate(dqkv, fresh=True)

    return Tensor._make(out, (qkv,), backward)


def concat(tensors: list, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(a, b)
            t._accumulate(g[tuple(idx)], fresh=True)

    return Tensor._make(np.concatenate(datas, axis=axis), tuple(tensors), backward)
