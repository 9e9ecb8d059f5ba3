"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation in the package is an entry of the op catalog
below.  An op computes its forward value eagerly with numpy and, when any
input requires a gradient, attaches a :class:`Node` holding a closure that maps
the output gradient to input gradients.  :class:`Tape` linearises the graph
that ends at a scalar loss so :func:`backward` can visit every recorded op
exactly once in reverse topological order.

Broadcasting is deliberately narrow: two operands may differ in shape only if
the result has the shape of one of them (bias-style expansion, size-1 axes,
scalars).  Mutual expansion such as ``(N, 1) + (1, M)`` is rejected.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "Node", "Tape", "ShapeError", "NonFiniteError", "OPS", "apply", "register",
    "backward", "no_grad", "is_grad_enabled", "manual_seed", "rng", "set_default_dtype",
    "get_default_dtype", "grad_check", "grad_check_params", "tensor", "zeros", "ones",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "concat", "reshape", "transpose",
    "softmax", "log_softmax", "layer_norm", "gelu", "relu", "sum", "mean", "l2_normalize",
    "dropout", "exp", "log", "embedding", "unfold2d",
]

Number = Union[int, float]


class ShapeError(ValueError):
    """Operands do not conform to an op's shape rule."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf from its inputs."""


_state = {"grad": True, "dtype": np.float32, "rng": np.random.default_rng(0)}


def set_default_dtype(dtype) -> None:
    _state["dtype"] = np.dtype(dtype).type


def get_default_dtype():
    return _state["dtype"]


def is_grad_enabled() -> bool:
    return _state["grad"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def manual_seed(seed: int) -> None:
    """Reseed the generator that drives dropout masks."""
    _state["rng"] = np.random.default_rng(seed)


def rng() -> np.random.Generator:
    return _state["rng"]


class Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward = backward


class Tensor:
    """A dense row-major array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "node", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = _state["dtype"]
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _state["dtype"]), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _state["dtype"]), requires_grad=requires_grad)


# ----------------------------------------------------------------------------
# graph bookkeeping
# ----------------------------------------------------------------------------

OPS: dict = {}


def register(name: str):
    """Add a function to the op catalog under ``name``."""

    def deco(fn):
        OPS[name] = fn
        return fn

    return deco


def apply(op_kind: str, *inputs, **attrs) -> Tensor:
    """Run catalog entry ``op_kind`` on ``inputs`` with keyword ``attrs``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise KeyError(f"unknown op {op_kind!r}; catalog has {sorted(OPS)}") from None
    return fn(*inputs, **attrs)


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    out = Tensor(data)
    if _state["grad"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, backward_fn)
    return out


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or _state["dtype"]))


class Tape:
    """Ops reachable from ``output`` in topological order (inputs first)."""

    def __init__(self, output: Tensor):
        order: list = []
        seen: set = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t.node.inputs:
                if inp.node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        self.order = order

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def ops(self) -> list:
        return [t.node.op for t in self.order]


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires a gradient."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("backward: loss does not depend on any tensor that requires grad")
    tape = Tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for out in reversed(tape.order):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        node = out.node
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi


# ----------------------------------------------------------------------------
# shape helpers
# ----------------------------------------------------------------------------

def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    try:
        out = np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a} and {b} do not conform") from None
    if out != a and out != b:
        raise ShapeError(f"{op}: shapes {a} and {b} would expand each other; reshape explicitly")
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------------

@register("add")
def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and isinstance(a, Tensor):
        c = float(b)
        return _result("add", a.data + a.dtype.type(c), (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


@register("sub")
def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    if not isinstance(a, Tensor):
        return add(neg(b), float(a))
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


@register("mul")
def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and isinstance(a, Tensor):
        return scale(a, float(b))
    if not isinstance(a, Tensor):
        return scale(b, float(a))
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result("mul", ad * bd, (a, b), bw)


@register("scale")
def scale(a: Tensor, c: Number) -> Tensor:
    c = a.dtype.type(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


@register("div")
def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, 1.0 / float(b))
    if not isinstance(a, Tensor):
        a = _as_tensor(a, like=b)
    _broadcast_shape("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result("div", out, (a, b), bw)


@register("neg")
def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


@register("exp")
def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


@register("log")
def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _result("log", out, (a,), lambda g: (g / ad,))


# ----------------------------------------------------------------------------
# contraction and layout
# ----------------------------------------------------------------------------

@register("matmul")
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; a 2-D operand is expanded over the other's batch axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not contract")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), bw)


@register("reshape")
def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(src),))


@register("transpose")
def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) % a.ndim for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


@register("concat")
def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors,
                   lambda g: tuple(np.split(g, sizes, axis=ax)))


@register("sum")
def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result("sum", np.asarray(out), (a,), bw)


@register("mean")
def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ----------------------------------------------------------------------------
# nonlinearities and normalisation
# ----------------------------------------------------------------------------

@register("softmax")
def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _result("softmax", s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


@register("log_softmax")
def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result("log_softmax", out, (a,), bw)


@register("layer_norm")
def layer_norm(a: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an optional broadcastable affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    inputs = [a]
    if gamma is not None:
        _broadcast_shape("layer_norm", x.shape, gamma.shape)
        out = out * gamma.data
        inputs.append(gamma)
    if beta is not None:
        _broadcast_shape("layer_norm", x.shape, beta.shape)
        out = out + beta.data
        inputs.append(beta)

    def bw(g):
        gh = g * gamma.data if gamma is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(_unbroadcast(g, beta.shape))
        return tuple(grads)

    return _result("layer_norm", out, inputs, bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@register("gelu")
def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),)

    return _result("gelu", out, (a,), bw)


@register("relu")
def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _result("relu", np.where(pos, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * pos,))


@register("l2_normalize")
def l2_normalize(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each last-axis vector by ``max(norm, eps)``; zero vectors stay zero."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    big = norm > eps
    d = np.where(big, norm, eps).astype(x.dtype, copy=False)
    y = x / d

    def bw(g):
        proj = np.where(big, (g * y).sum(axis=-1, keepdims=True), 0).astype(x.dtype, copy=False)
        return ((g - y * proj) / d,)

    return _result("l2_normalize", y, (a,), bw)


@register("dropout")
def dropout(a: Tensor, p: float, training: bool = True, generator: Optional[np.random.Generator] = None) -> Tensor:
    if not training or p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError("dropout: p must be < 1")
    gen = generator if generator is not None else _state["rng"]
    keep = (gen.random(a.shape) >= p).astype(a.dtype) * a.dtype.type(1.0 / (1.0 - p))
    return _result("dropout", a.data * keep, (a,), lambda g: (g * keep,))


@register("embedding")
def embedding(weight: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: index out of range for table of {weight.shape[0]} rows")
    rows = weight.shape

    def bw(g):
        out = np.zeros(rows, dtype=g.dtype)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, *rows[1:]))
        return (out,)

    return _result("embedding", weight.data[idx], (weight,), bw)


@register("unfold2d")
def unfold2d(a: Tensor, kernel: int = 3, stride: int = 1, pad: int = 1) -> Tensor:
    """Channel-last im2col: (N, H, W, C) -> (N, Ho, Wo, kernel*kernel*C)."""
    if a.ndim != 4:
        raise ShapeError(f"unfold2d: expected (N, H, W, C), got {a.shape}")
    n, h, w, c = a.shape
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"unfold2d: input {a.shape} too small for kernel {kernel}")
    xp = np.pad(a.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else a.data
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    cols = [xp[:, i:i + hs:stride, j:j + ws:stride, :] for i in range(kernel) for j in range(kernel)]
    out = np.stack(cols, axis=3).reshape(n, ho, wo, kernel * kernel * c)

    def bw(g):
        g = g.reshape(n, ho, wo, kernel * kernel, c)
        gp = np.zeros(xp.shape, dtype=g.dtype)
        k = 0
        for i in range(kernel):
            for j in range(kernel):
                gp[:, i:i + hs:stride, j:j + ws:stride, :] += g[:, :, :, k, :]
                k += 1
        if pad:
            gp = gp[:, pad:pad + h, pad:pad + w, :]
        return (gp,)

    return _result("unfold2d", out, (a,), bw)


# ----------------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------------

def _rel_error(auto: np.ndarray, fd: np.ndarray) -> float:
    if auto.size == 0:
        return 0.0
    return float(np.max(np.abs(auto - fd) / np.maximum(np.abs(fd), 1e-8)))


def _scalar(fn_out: Tensor) -> float:
    if fn_out.size != 1:
        raise ShapeError(f"grad_check: function must be scalar-valued, got shape {fn_out.shape}")
    v = float(fn_out.data.reshape(-1)[0])
    if not math.isfinite(v):
        raise NonFiniteError("grad_check: function value is not finite")
    return v


def grad_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-3,
               max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between autodiff and central differences at ``point``.

    The check runs in float64.  ``max_coords`` limits the finite-difference
    sweep to a random subset of coordinates for large inputs.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    out = fn(x)
    _scalar(out)
    if out.requires_grad:
        backward(out)
    auto = x.grad if x.grad is not None else np.zeros_like(base)
    idx = np.arange(base.size)
    if max_coords is not None and base.size > max_coords:
        idx = np.sort(np.random.default_rng(seed).choice(base.size, max_coords, replace=False))
    fd = np.empty(len(idx))
    flat = base.reshape(-1)
    with no_grad():
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar(fn(Tensor(base.copy())))
            flat[i] = orig - eps
            fm = _scalar(fn(Tensor(base.copy())))
            flat[i] = orig
            fd[n] = (fp - fm) / (2.0 * eps)
    return _rel_error(auto.reshape(-1)[idx], fd)


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-3,
                      max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Like :func:`grad_check` but perturbs parameter tensors in place.

    Parameters must already hold float64 data; they are restored on exit.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check_params: parameters must be float64")
        p.grad = None
    out = loss_fn()
    _scalar(out)
    backward(out)
    coords = [(k, i) for k, p in enumerate(params) for i in range(p.size)]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[j] for j in sorted(pick)]
    auto = np.empty(len(coords))
    fd = np.empty(len(coords))
    with no_grad():
        for n, (k, i) in enumerate(coords):
            p = params[k]
            auto[n] = 0.0 if p.grad is None else p.grad.reshape(-1)[i]
            orig = p.data
            v = orig.reshape(-1)[i]
            p.data = orig.copy()
            p.data.flat[i] = v + eps
            fp = _scalar(loss_fn())
            p.data.flat[i] = v - eps
            fm = _scalar(loss_fn())
            p.data = orig
            fd[n] = (fp - fm) / (2.0 * eps)
    for p in params:
        p.grad = None
    return _rel_error(auto, fd)
