"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When any input requires a gradient
(and recording is enabled) the output remembers its parents and a closure
that maps the output gradient to per-parent gradients. :func:`backward`
walks that tape in reverse topological order.

Non-finite values are treated as errors: every op checks its output and raises
:class:`NonFiniteError` naming the op, so a blown-up update never reaches the
parameters.
"""

from __future__ import annotations

import contextlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

ENGINE_VERSION = "sear-autodiff/1"

# Large finite stand-in for -inf in masked attention scores; exp() of it is exactly 0.
MASK_VALUE = -1e9


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


_recording = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


@contextlib.contextmanager
def frozen(params: Iterable["Tensor"]):
    """Treat ``params`` as constants inside the block (no gradient flows into them)."""
    params = list(params)
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, prev):
            p.requires_grad = flag


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        # Parents that are constants at construction time (including frozen
        # parameters) are recorded as None and never receive gradient.
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(fn, a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(np.add, a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(np.subtract, a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(np.multiply, a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(np.divide, a, b, "div")

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(a.data**exponent, (a,), bw, "pow")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def bw(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _make(a.data * s, (a,), bw, "silu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = _binary(np.less_equal, a, b, "minimum")

    def bw(g):
        return (
            _unbroadcast(np.where(pick_a, g, 0.0), a.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), b.shape),
        )

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw, "minimum")


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``; those entries get no gradient."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, value, a.data)
    except ValueError as exc:
        raise ShapeError(f"masked_fill: mask {mask.shape} vs {a.shape}") from exc
    if out.shape != a.shape:
        raise ShapeError(f"masked_fill: mask {mask.shape} would broadcast {a.shape}")
    return _make(out, (a,), lambda g: (np.where(mask, 0.0, g),), "masked_fill")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------- reductions


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims) / count

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _make(np.asarray(out), (a,), bw, "mean")


def logsumexp(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axes, keepdims=True)
    out = m + np.log(s)
    weights = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axes)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * weights,)

    return _make(np.asarray(out), (a,), bw, "logsumexp")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: affine {weight.shape} does not match {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * weight.data + bias.data

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gh = g * weight.data
            gx = rstd * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        if weight.requires_grad:
            gw = (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return _make(out, (x, weight, bias), bw, "layer_norm")


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise TypeError("index with numpy arrays, not Tensors")
    out = a.data[index]
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {[t.shape for t in tensors]}") from exc

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, bw, "stack")


# ---------------------------------------------------------------- differentiation


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent is not None and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. ``params``, in order.

    Parameters the loss does not depend on get zero arrays.
    """
    if loss.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones(loss.shape)
        for node in reversed(_topological_order(loss)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or parent is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    out = []
    for p in params:
        g = grads.get(id(p))
        out.append(np.zeros(p.shape) if g is None else np.array(g, dtype=np.float64).reshape(p.shape))
    return out


class Graph:
    """A traced computation: run :meth:`forward` with named inputs, then :meth:`backward`.

    ``fn`` takes the named input tensors as keyword arguments and returns a
    dict of named output tensors.
    """

    def __init__(self, fn: Callable[..., dict[str, Tensor]]):
        self.fn = fn
        self.outputs: dict[str, Tensor] | None = None

    def forward(self, **inputs) -> dict[str, Tensor]:
        outputs = self.fn(**{k: as_tensor(v) for k, v in inputs.items()})
        for name, t in outputs.items():
            if not np.isfinite(t.data).all():
                raise NonFiniteError(f"output '{name}' is not finite")
        self.outputs = outputs
        return outputs

    def backward(self, loss: str | Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        if self.outputs is None:
            raise GraphError("backward called before forward")
        if isinstance(loss, str):
            loss = self.outputs[loss]
        return backward(loss, params)


def check_gradient(fn, point, epsilon: float = 1e-5, coords=None) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``point`` is either an ndarray (``fn`` receives it as a Tensor) or a list of
    leaf Tensors that the zero-argument ``fn`` reads; those are perturbed in
    place and restored. ``coords`` optionally restricts the check to a list of
    ``(leaf_index, flat_index)`` pairs.
    """
    if isinstance(point, (list, tuple)):
        leaves, call = list(point), fn
    else:
        leaf = point if isinstance(point, Tensor) else Tensor(np.array(point, dtype=np.float64))
        leaf.requires_grad = True
        leaves = [leaf]

        def call():
            return fn(leaf)

    analytic = backward(call(), leaves)
    if coords is None:
        coords = [(i, j) for i, leaf in enumerate(leaves) for j in range(leaf.size)]
    worst = 0.0
    with no_grad():
        for i, j in coords:
            data = leaves[i].data
            idx = np.unravel_index(j, data.shape)
            original = data[idx]
            data[idx] = original + epsilon
            f_plus = call().item()
            data[idx] = original - epsilon
            f_minus = call().item()
            data[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic[i].reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    lr: float
    weight_decay: float
    beta1: float
    beta2: float
    eps: float
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class AdamW:
    """Adam with decoupled weight decay (the decay multiplies the parameter)."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 3e-4,
        weight_decay: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.state = OptimizerState(
            lr=lr,
            weight_decay=weight_decay,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            m=[np.zeros(p.shape) for p in self.params],
            v=[np.zeros(p.shape) for p in self.params],
        )

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        st = self.state
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.isfinite(g).all():
                raise NonFiniteError("non-finite gradient; update skipped")
        st.step += 1
        c1 = 1.0 - st.beta1**st.step
        c2 = 1.0 - st.beta2**st.step
        for k, (p, g) in enumerate(zip(self.params, grads)):
            m = st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g
            v = st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * (g * g)
            decayed = p.data * (1.0 - st.lr * st.weight_decay) if st.weight_decay else p.data
            p.data = decayed - st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """JSON header line, then little-endian float64 payload in header order."""
    names = list(arrays)
    header = {
        "engine": ENGINE_VERSION,
        "names": names,
        "shapes": [list(np.shape(arrays[n])) for n in names],
        "meta": meta or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    if header.get("engine") != ENGINE_VERSION:
        raise ValueError(f"checkpoint engine {header.get('engine')!r} != {ENGINE_VERSION!r}")
    arrays, offset = {}, 0
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * struct.calcsize("<d")
        if offset + nbytes > len(payload):
            raise ValueError(f"checkpoint truncated at '{name}'")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise ValueError("checkpoint has trailing bytes")
    return arrays, header["meta"]
