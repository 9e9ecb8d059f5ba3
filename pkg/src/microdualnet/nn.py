"""Parameter containers and the small layer set the model is built from."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that requires grad.  ``decay`` marks weight-decay eligibility."""

    __slots__ = ("decay",)

    def __init__(self, data, decay: bool = True):
        super().__init__(np.asarray(data, dtype=T.get_default_dtype()), requires_grad=True)
        self.decay = decay


class Buffer(Parameter):
    """Persistent state saved with the weights but never optimised (running statistics)."""

    def __init__(self, data):
        super().__init__(data, decay=False)
        self.requires_grad = False


class Module:
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list:
        """Trainable parameters; buffers appear only in :meth:`named_parameters` and the state dict."""
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """``y = x @ W + b`` with the fan-in uniform init used by common frameworks."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim), decay=False)
        self.beta = Parameter(np.zeros(dim), decay=False)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm(Module):
    """Per-feature standardisation over the batch axis of (N, F) inputs.

    Training batches of two or more rows use their own statistics and update
    the running estimates; evaluation (and single-row batches) use the running
    estimates, which makes the layer a fixed affine map.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim), decay=False)
        self.beta = Parameter(np.zeros(dim), decay=False)
        self.running_mean = Buffer(np.zeros(dim))
        self.running_var = Buffer(np.ones(dim))
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        if self.training and n > 1:
            xn = T.layer_norm(x.transpose(1, 0), eps=self.eps).transpose(1, 0)
            if T.is_grad_enabled():
                d = x.data.astype(np.float64)
                m = self.momentum
                self.running_mean.data = ((1 - m) * self.running_mean.data + m * d.mean(axis=0)).astype(x.dtype)
                self.running_var.data = ((1 - m) * self.running_var.data + m * d.var(axis=0, ddof=1)).astype(x.dtype)
        else:
            inv = 1.0 / np.sqrt(self.running_var.data.astype(np.float64) + self.eps)
            xn = (x - Tensor(self.running_mean.data.astype(x.dtype))) * Tensor(inv.astype(x.dtype))
        return xn * self.gamma + self.beta


class Dropout(Module):
    def __init__(self, p: float):
        self.p = p

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, training=self.training)


class FeedForward(Module):
    """Linear -> GELU -> Dropout -> Linear."""

    def __init__(self, dim: int, hidden: int, dropout: float, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.drop = Dropout(dropout)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.drop(T.gelu(self.fc1(x))))


class MultiHeadSelfAttention(Module):
    """Scaled dot-product attention over axis 1 of an (N, L, D) batch.

    With ``mask`` (N, L) booleans, invalid positions are removed from the keys
    and their own output rows are zeroed.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def attention(self, x: Tensor, mask: Optional[np.ndarray] = None) -> tuple:
        """Return (per-head context, attention weights) for inspection and tests."""
        n, length, dim = x.shape
        h, dh = self.heads, dim // self.heads

        def split(t):
            return t.reshape(n, length, h, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(dh))
        if mask is not None:
            bias = np.where(np.asarray(mask, dtype=bool), 0.0, -1e9).astype(x.dtype)
            scores = scores + Tensor(bias.reshape(n, 1, 1, length))
        weights = T.softmax(scores)
        return weights @ v, weights

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        n, length, dim = x.shape
        ctx, _ = self.attention(x, mask)
        y = self.out(ctx.transpose(0, 2, 1, 3).reshape(n, length, dim))
        if mask is not None:
            y = y * Tensor(np.asarray(mask, dtype=x.dtype).reshape(n, length, 1))
        return y
