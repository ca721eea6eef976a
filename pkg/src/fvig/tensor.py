"""numpy-backed dense tensors with reverse-mode automatic differentiation.

Everything is float64. Each operation attaches its inputs and a backward
rule to the output tensor; ``Tensor.backward()`` replays the rules in
reverse topological order and accumulates into ``.grad`` until the caller
resets it. Broadcasting follows numpy's trailing-dimension rules only.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "as_tensor",
    "broadcast_add",
    "subtract",
    "multiply",
    "divide",
    "matmul",
    "power",
    "exp",
    "log",
    "sigmoid",
    "leaky_relu",
    "softmax_lastdim",
    "cosine_similarity",
    "concat_lastdim",
    "slice_lastdim",
    "transpose_last2",
    "reshape",
    "gather_neighbors",
    "scatter_add_neighbors",
    "dropout",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def _broadcast_shape(sa: tuple, sb: tuple) -> tuple:
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"shapes {sa} and {sb} are not broadcast-compatible") from None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array plus an optional accumulated gradient.

    Tensors produced by operations remember their inputs and how to push a
    gradient back to them; leaf tensors created with ``requires_grad=True``
    collect the final gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_rule")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_rule: Callable[[np.ndarray, dict], None] | None = None

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], rule) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_rule = rule
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # ------------------------------------------------------------------
    # reverse pass
    # ------------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor.

        ``self`` must be a scalar. Repeated calls without ``zero_grad``
        add to the existing gradients.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        # pending holds this pass's gradients; .grad keeps the running total
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward_rule is not None:
                node._backward_rule(g, pending)

    # ------------------------------------------------------------------
    # operator sugar
    # ------------------------------------------------------------------

    def __add__(self, other):
        return broadcast_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        axis = _check_axis(self, axis)
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def rule(g, pending):
            _send(pending, self, _spread(g, self.shape, axis, keepdims))

        return Tensor._result(out, (self,), rule)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        axis = _check_axis(self, axis)
        out = self.data.mean(axis=axis, keepdims=keepdims)
        count = self.data.size if axis is None else self.data.shape[axis]

        def rule(g, pending):
            _send(pending, self, _spread(g, self.shape, axis, keepdims) / count)

        return Tensor._result(out, (self,), rule)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        """Max reduction; the backward routes gradient to the first argmax."""
        axis = _check_axis(self, axis)
        out = self.data.max(axis=axis, keepdims=keepdims)

        def rule(g, pending):
            gx = np.zeros_like(self.data)
            if axis is None:
                gx.flat[int(np.argmax(self.data))] = g.sum()
            else:
                am = np.expand_dims(np.argmax(self.data, axis=axis), axis)
                gr = g if keepdims else np.expand_dims(g, axis)
                np.put_along_axis(gx, am, gr, axis=axis)
            _send(pending, self, gx)

        return Tensor._result(out, (self,), rule)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _send(pending: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    if key in pending:
        pending[key] = pending[key] + g
    else:
        pending[key] = g


def _check_axis(t: Tensor, axis: int | None) -> int | None:
    if axis is None:
        return None
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for shape {t.shape}")
    return axis % t.ndim


def _spread(g: np.ndarray, shape: tuple, axis: int | None, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).astype(np.float64)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).astype(np.float64)


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------


def broadcast_add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def rule(g, pending):
        _send(pending, a, _unbroadcast(g, a.shape))
        _send(pending, b, _unbroadcast(g, b.shape))

    return Tensor._result(a.data + b.data, (a, b), rule)


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def rule(g, pending):
        _send(pending, a, _unbroadcast(g, a.shape))
        _send(pending, b, _unbroadcast(-g, b.shape))

    return Tensor._result(a.data - b.data, (a, b), rule)


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def rule(g, pending):
        _send(pending, a, _unbroadcast(g * b.data, a.shape))
        _send(pending, b, _unbroadcast(g * a.data, b.shape))

    return Tensor._result(a.data * b.data, (a, b), rule)


def divide(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def rule(g, pending):
        _send(pending, a, _unbroadcast(g / b.data, a.shape))
        _send(pending, b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor._result(a.data / b.data, (a, b), rule)


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    e = float(exponent)

    def rule(g, pending):
        _send(pending, x, g * e * x.data ** (e - 1.0))

    return Tensor._result(x.data**e, (x,), rule)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def rule(g, pending):
        _send(pending, x, g * out)

    return Tensor._result(out, (x,), rule)


def log(x) -> Tensor:
    x = as_tensor(x)

    def rule(g, pending):
        _send(pending, x, g / x.data)

    return Tensor._result(np.log(x.data), (x,), rule)


# ----------------------------------------------------------------------
# matrix product
# ----------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product ``[.., M, K] @ [.., K, P] -> [.., M, P]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    out = a.data @ b.data

    def rule(g, pending):
        _send(pending, a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _send(pending, b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._result(out, (a, b), rule)


# ----------------------------------------------------------------------
# nonlinearities
# ----------------------------------------------------------------------


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # evaluate on the non-overflowing branch for either sign
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def rule(g, pending):
        _send(pending, x, g * out * (1.0 - out))

    return Tensor._result(out, (x,), rule)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    d = x.data

    def rule(g, pending):
        _send(pending, x, g * np.where(d >= 0, 1.0, slope))

    return Tensor._result(np.where(d >= 0, d, slope * d), (x,), rule)


def softmax_lastdim(x) -> Tensor:
    """Softmax along the last dimension, stabilized by max subtraction."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim needs a non-empty last dimension, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g, pending):
        _send(pending, x, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return Tensor._result(out, (x,), rule)


def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """Cosine of the angle between trailing-dim vectors of ``a`` and ``b``.

    Norms are clamped below at ``eps`` so zero vectors yield 0 instead of
    NaN; where the clamp is active the norm contributes no gradient.
    Leading dimensions broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"trailing dimensions differ: {a.shape} vs {b.shape}")
    _broadcast_shape(a.shape[:-1], b.shape[:-1])
    dot = (a.data * b.data).sum(axis=-1)
    na = np.sqrt((a.data * a.data).sum(axis=-1))
    nb = np.sqrt((b.data * b.data).sum(axis=-1))
    ca = np.maximum(na, eps)
    cb = np.maximum(nb, eps)
    denom = ca * cb
    out = dot / denom

    def rule(g, pending):
        na_safe = np.where(na > 0, na, 1.0)
        nb_safe = np.where(nb > 0, nb, 1.0)
        ga = (
            b.data / denom[..., None]
            - np.where(na > eps, dot / (ca * ca * cb), 0.0)[..., None] * a.data / na_safe[..., None]
        )
        gb = (
            a.data / denom[..., None]
            - np.where(nb > eps, dot / (cb * cb * ca), 0.0)[..., None] * b.data / nb_safe[..., None]
        )
        _send(pending, a, _unbroadcast(g[..., None] * ga, a.shape))
        _send(pending, b, _unbroadcast(g[..., None] * gb, b.shape))

    return Tensor._result(out, (a, b), rule)


# ----------------------------------------------------------------------
# shape surgery
# ----------------------------------------------------------------------


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_lastdim needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_lastdim parts disagree on leading shape: {[p.shape for p in parts]}")
    widths = [p.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)
    offsets = np.cumsum([0] + widths)

    def rule(g, pending):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _send(pending, p, g[..., lo:hi])

    return Tensor._result(out, tuple(parts), rule)


def slice_lastdim(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    width = x.shape[-1]
    if not 0 <= start <= stop <= width:
        raise ShapeError(f"slice [{start}:{stop}] out of range for last dimension {width}")

    def rule(g, pending):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        _send(pending, x, gx)

    return Tensor._result(x.data[..., start:stop].copy(), (x,), rule)


def transpose_last2(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got {x.shape}")

    def rule(g, pending):
        _send(pending, x, np.swapaxes(g, -1, -2))

    return Tensor._result(np.swapaxes(x.data, -1, -2).copy(), (x,), rule)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)

    def rule(g, pending):
        _send(pending, x, g.reshape(x.shape))

    return Tensor._result(out.copy(), (x,), rule)


# ----------------------------------------------------------------------
# neighborhood indexing
# ----------------------------------------------------------------------


def gather_neighbors(x, index: np.ndarray) -> Tensor:
    """Collect per-node neighbor features: ``out[b,i,k,:] = x[b, index[b,i,k], :]``.

    The backward scatter-adds the incoming gradient back into ``x``, so
    gradient mass is conserved across duplicate indices.
    """
    x = as_tensor(x)
    index = np.asarray(index)
    if x.ndim != 3 or index.ndim != 3 or index.shape[:2] != x.shape[:2]:
        raise ShapeError(f"gather_neighbors expects x[B,N,D] and index[B,N,K], got {x.shape} and {index.shape}")
    if not np.issubdtype(index.dtype, np.integer):
        raise TypeError(f"neighbor index must be integral, got dtype {index.dtype}")
    n = x.shape[1]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"neighbor index out of range [0, {n}): min={index.min()}, max={index.max()}")
    batch = np.arange(x.shape[0])[:, None, None]
    out = x.data[batch, index]

    def rule(g, pending):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (batch, index), g)
        _send(pending, x, gx)

    return Tensor._result(out, (x,), rule)


def scatter_add_neighbors(values, index: np.ndarray, num_nodes: int) -> Tensor:
    """Sum per-slot contributions into nodes: ``out[b, index[b,i,k], :] += values[b,i,k,:]``."""
    values = as_tensor(values)
    index = np.asarray(index)
    if values.ndim != 4 or index.ndim != 3 or values.shape[:3] != index.shape:
        raise ShapeError(
            f"scatter_add_neighbors expects values[B,N,K,D] and index[B,N,K], got {values.shape} and {index.shape}"
        )
    if index.size and (index.min() < 0 or index.max() >= num_nodes):
        raise IndexError(f"neighbor index out of range [0, {num_nodes})")
    batch = np.arange(values.shape[0])[:, None, None]
    out = np.zeros((values.shape[0], num_nodes, values.shape[-1]))
    np.add.at(out, (batch, index), values.data)

    def rule(g, pending):
        _send(pending, values, g[batch, index])

    return Tensor._result(out, (values,), rule)


# ----------------------------------------------------------------------
# regularization
# ----------------------------------------------------------------------


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval is exact identity."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def rule(g, pending):
        _send(pending, x, g * mask)

    return Tensor._result(x.data * mask, (x,), rule)
