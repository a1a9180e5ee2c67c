"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable op records its
inputs and a closure that maps the output gradient to input gradients;
:meth:`Tensor.backward` walks the recorded graph in reverse topological
order. Broadcasting is deliberately limited to adding a bias vector over the
last dimension.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "transpose",
    "swap_last",
    "reshape",
    "concat",
    "relu",
    "softmax",
    "masked_fill",
    "layer_norm",
    "embedding",
    "sum",
    "mean",
    "mse",
    "cross_entropy",
    "dropout",
    "grad_check",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every reachable node that requires it.

        Gradients are summed into existing ``grad`` arrays; callers zero them
        between optimisation steps.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        # interior nodes start fresh each call; leaves keep accumulating
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topological_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last dim."""
    a, b = _as_tensor(a), _as_tensor(b, a)
    bias = b.ndim == 1 and a.ndim > 1 and b.shape[0] == a.shape[-1]
    if not bias:
        _check_same(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g)

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    _check_same(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    _check_same(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), "mul", backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _result(a.data * a.dtype.type(c), (a,), "scale", backward)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def backward(g):
        a._accumulate(g * keep)

    return _result(a.data * keep, (a,), "relu", backward)


def dropout(a: Tensor, p: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; a no-op when ``p == 0`` or no generator is given."""
    if p == 0.0 or rng is None:
        return a
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    keep = (rng.random(a.shape) >= p) * a.dtype.type(1.0 / (1.0 - p))

    def backward(g):
        a._accumulate(g * keep)

    return _result(a.data * keep, (a,), "dropout", backward)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant (mask may broadcast)."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    keep = ~mask

    def backward(g):
        a._accumulate(g * keep)

    return _result(np.where(mask, a.dtype.type(value), a.data), (a,), "masked_fill", backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a plain matrix shared across ``a``'s leading axes or has the
    same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ in {a.shape} and {b.shape}")

    k, n = b.shape[-2], b.shape[-1]

    def backward(g):
        if shared:
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(a.data.reshape(-1, k).T @ g2)
            return
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    if shared:
        # one large GEMM instead of a stack of small ones
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))
    else:
        out = a.data @ b.data
    return _result(out, (a, b), "matmul", backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _result(np.transpose(a.data, axes), (a,), "transpose", backward)


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _result(a.data.reshape(shape), (a,), "reshape", backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    ax = axis % parts[0].ndim
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(p.ndim) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {parts[0].shape} and {p.shape}")
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=ax)):
            if p.requires_grad:
                p._accumulate(piece)

    return _result(np.concatenate([p.data for p in parts], axis=ax), parts, "concat", backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table``; output shape is ``ids.shape + (d,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: ids outside [0, {table.shape[0]})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(full)

    return _result(table.data[ids], (table,), "embedding", backward)


# ---------------------------------------------------------------- reductions


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(np.asarray(a.data.sum()), (a,), "sum", backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return _result(np.asarray(a.data.mean()), (a,), "mean", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), "softmax", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: last dim {d} does not match gain {gain.shape} / bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            x._accumulate(
                inv
                * (
                    gh
                    - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
                )
            )

    return _result(out, (x, gain, bias), "layer_norm", backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    a, b = _as_tensor(a), _as_tensor(b, a)
    _check_same(a, b, "mse")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * diff / n)
        if b.requires_grad:
            b._accumulate(-g * 2.0 * diff / n)

    return _result(np.asarray((diff * diff).mean()), (a, b), "mse", backward)


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    pad_mask: np.ndarray | None = None,
    smoothing: float = 0.0,
) -> Tensor:
    """Mean token-level cross entropy over unmasked positions.

    ``logits`` is ``[..., V]``; ``pad_mask`` is true at positions to ignore.
    With label smoothing ``eps`` the target distribution is
    ``(1 - eps) * onehot + eps / V``.
    """
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != flat.shape[0]:
        raise DimensionError(f"cross_entropy: {targets.shape[0]} targets for {flat.shape[0]} rows")
    keep = (
        np.ones(flat.shape[0], dtype=bool)
        if pad_mask is None
        else ~np.asarray(pad_mask, dtype=bool).reshape(-1)
    )
    n = int(keep.sum())
    if n == 0:
        raise ValueError("cross_entropy: every position is masked")
    if targets[keep].min() < 0 or targets[keep].max() >= V:
        raise IndexError(f"cross_entropy: targets outside [0, {V})")
    safe_t = np.where(keep, targets, 0)
    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(flat.shape[0])
    nll = -logp[rows, safe_t]
    if smoothing:
        nll = (1.0 - smoothing) * nll - smoothing * logp.mean(axis=1)
    loss = (nll * keep).sum() / n

    def backward(g):
        q = np.full_like(flat, smoothing / V)
        q[rows, safe_t] += 1.0 - smoothing
        grad = (np.exp(logp) - q) * (keep[:, None] * (g / n))
        logits._accumulate(grad.reshape(logits.shape))

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), "cross_entropy", backward)


# ---------------------------------------------------------------- verification


def grad_check(
    f: Callable[[], Tensor],
    inputs: Iterable[Tensor],
    eps: float = 1e-4,
) -> float:
    """Max relative error between backward grads and central differences.

    ``f`` rebuilds the scalar loss from the current contents of ``inputs``
    (which are perturbed in place). Use double precision inputs.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    f().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-8)
                worst = max(worst, err)
    return worst
