"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a backward rule; :func:`backward`
walks the recorded graph in reverse topological order.  Storage is a numpy
array, gradients are plain arrays of the same shape.  Broadcasting follows
numpy's trailing-dimension rule and gradients are summed back to the operand
shape.

Finite-difference checking lives here as well so that every primitive can be
verified against an independent numerical oracle.
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "as_tensor",
    "backward",
    "matmul",
    "softmax",
    "log_softmax",
    "layer_norm",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "add",
    "sub",
    "mul",
    "div",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "l2_normalize",
    "finite_difference_check",
    "check_gradients",
    "LAYER_NORM_EPS",
]

LAYER_NORM_EPS = 1e-5


class Tensor:
    """A float64 array that optionally tracks gradients.

    ``values`` is the flat row-major view; ``data`` is the shaped array.
    Tensors are treated as immutable once built; only ``grad`` changes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_consumed")
    __array_priority__ = 100
    __array_ufunc__ = None  # numpy operands defer to the reflected Tensor operators

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(n == 0 for n in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.reshape(-1)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, rule, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=rule, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------- binary ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), rule, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), rule, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), rule, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def rule(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), rule, "div")


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    if p < 1 and np.any(a.data <= 0.0):
        raise DomainError(f"power {p} needs a positive base")

    def rule(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(a.data**p, (a,), rule, "pow")


def matmul(a, b):
    """Matrix product of ``(..., m, k)`` with ``(k, n)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    k, n = b.shape

    def rule(g):
        grad_a = g @ b.data.T
        grad_b = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return grad_a, grad_b

    return _make(a.data @ b.data, (a, b), rule, "matmul")


# ----------------------------------------------------------------- unary ops


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0.0

    def rule(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), (x,), rule, "relu")


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def rule(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), rule, "sigmoid")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def rule(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), rule, "tanh")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def rule(g):
        return (g * out,)

    return _make(out, (x,), rule, "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log of non-positive input")

    def rule(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), rule, "log")


def sqrt(x):
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt of negative input")
    out = np.sqrt(x.data)

    def rule(g):
        return (g * 0.5 / out,)

    return _make(out, (x,), rule, "sqrt")


# ------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(out)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), rule, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {x.shape} as {shape}") from None

    def rule(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), rule, "reshape")


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")

    def rule(g):
        return (g.T,)

    return _make(x.data.T, (x,), rule, "transpose")


# -------------------------------------------------------- normalizations


def _check_axis(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x, axis=-1):
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    ax = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _make(out, (x,), rule, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    ax = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def rule(g):
        return (g - probs * g.sum(axis=ax, keepdims=True),)

    return _make(out, (x,), rule, "log_softmax")


def layer_norm(x, eps=LAYER_NORM_EPS):
    """Normalize the last axis to zero mean and unit population variance.

    No learned scale or shift.
    """
    x = as_tensor(x)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("layer_norm needs a last dimension of at least 2")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def rule(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gx),)

    return _make(out, (x,), rule, "layer_norm")


def l2_normalize(x, axis=-1):
    """Scale rows to unit Euclidean norm (composed from primitives)."""
    x = as_tensor(x)
    return div(x, sqrt(sum(mul(x, x), axis=axis, keepdims=True)))


# ------------------------------------------------------------- backward


class Tape:
    """Operations reachable from a scalar loss, in topological order."""

    def __init__(self, loss: Tensor):
        if not isinstance(loss, Tensor):
            raise ContractError("backward needs a Tensor loss")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.loss = loss
        self.nodes = self._toposort(loss)

    @staticmethod
    def _toposort(root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self):
        loss = self.loss
        if loss._consumed:
            raise ContractError("backward already ran on this loss; call reset() first")
        if not loss.requires_grad:
            raise ContractError("loss is not connected to any tensor that requires grad")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if not node._parents:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        loss._consumed = True

    def reset(self):
        for node in self.nodes:
            node.grad = None
        self.loss._consumed = False


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Only leaves accumulate ``grad``; intermediate results do not keep one.
    """
    tape = Tape(loss)
    tape.backward()
    return tape


# ----------------------------------------------------- gradient checking


FD_FLOOR = 1e-6


def _rel_error(fd, ad, floor=FD_FLOOR):
    return np.abs(fd - ad) / np.maximum(np.abs(fd) + np.abs(ad), floor)


def finite_difference_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-4,
                            floor: float = FD_FLOOR) -> float:
    """Max relative error between central differences and autodiff for ``f`` at ``x``.

    Components whose combined magnitude is below ``floor`` are compared on the
    floor's scale; central differences cannot resolve them beyond round-off.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    backward(f(leaf))
    ad = leaf.grad.reshape(-1)
    flat = base.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = f(Tensor(plus.reshape(base.shape))).item()
        fm = f(Tensor(minus.reshape(base.shape))).item()
        fd[i] = (fp - fm) / (2.0 * h)
    return float(_rel_error(fd, ad, floor).max())


def check_gradients(
    f: Callable[..., Tensor], inputs: Mapping[str, object], h: float = 1e-4,
    names: Iterable[str] | None = None, floor: float = FD_FLOOR,
) -> dict:
    """Run :func:`finite_difference_check` on each named keyword input of ``f``.

    ``f`` is called as ``f(**tensors)``; inputs not being checked are passed as
    constants.
    """
    fixed = {k: as_tensor(v).data for k, v in inputs.items()}
    errors = {}
    for name in names if names is not None else fixed:
        def partial(t, _name=name):
            kwargs = {k: Tensor(v) for k, v in fixed.items() if k != _name}
            kwargs[_name] = t
            return f(**kwargs)

        errors[name] = finite_difference_check(partial, fixed[name], h, floor)
    return errors


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    rows = [as_tensor(r) for r in rows]
    shape = rows[0].shape
    if any(r.shape != shape for r in rows):
        raise DimensionError("stack_rows: all rows must share a shape")

    def rule(g):
        return tuple(g[i] for i in range(len(rows)))

    return _make(np.stack([r.data for r in rows]), rows, rule, "stack")
