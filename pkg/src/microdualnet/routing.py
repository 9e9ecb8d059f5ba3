"""Entity-level soft routing between the ST and TS path outputs."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Module, Parameter
from .tensor import Tensor

TAU_ROUTING = 0.7
TAU_ROUTING_ALT = 1.0


def route_weights(r, tau_r: float = TAU_ROUTING):
    """softmax(r / tau_r) over the last axis; accepts tensors or arrays."""
    if not tau_r > 0:
        raise ValueError(f"routing temperature must be positive, got {tau_r}")
    if isinstance(r, Tensor):
        return T.softmax(T.scale(r, 1.0 / tau_r))
    z = np.asarray(r, dtype=np.float64) / tau_r
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def fuse(x_st, x_ts, alpha):
    """alpha[..., 0] * x_st + alpha[..., 1] * x_ts."""
    if isinstance(alpha, Tensor):
        a_st = T.reshape(_channel(alpha, 0), alpha.shape[:-1] + (1,))
        a_ts = T.reshape(_channel(alpha, 1), alpha.shape[:-1] + (1,))
        return x_st * a_st + x_ts * a_ts
    alpha = np.asarray(alpha)
    return alpha[..., 0:1] * np.asarray(x_st) + alpha[..., 1:2] * np.asarray(x_ts)


def _channel(x: Tensor, i: int) -> Tensor:
    pick = np.zeros(x.shape[-1], dtype=x.dtype)
    pick[i] = 1.0
    return T.sum(x * Tensor(pick), axis=-1)


def routing_param_count(dim: int, num_entities: int) -> int:
    """Learnable parameters of ``num_entities`` routers on ``dim``-wide paths."""
    hidden = dim // 2
    per_entity = 2 * dim * hidden + hidden + 2 * hidden + hidden * 2 + 2 + 2
    return num_entities * per_entity


class EntityRouter(Module):
    """K independent routers ``Linear(2D, D/2) -> LN -> ReLU -> Dropout -> Linear(D/2, 2)``
    plus a zero-initialised per-entity prior, evaluated in one batched pass.
    """

    def __init__(self, dim: int, num_entities: int, rng: np.random.Generator, tau_r: float = TAU_ROUTING,
                 dropout: float = 0.1):
        if not tau_r > 0:
            raise ValueError(f"routing temperature must be positive, got {tau_r}")
        k, h = num_entities, dim // 2
        b1 = 1.0 / math.sqrt(2 * dim)
        b2 = 1.0 / math.sqrt(h)
        self.w1 = Parameter(rng.uniform(-b1, b1, (k, 2 * dim, h)))
        self.b1 = Parameter(rng.uniform(-b1, b1, (k, 1, h)), decay=False)
        self.ln_gamma = Parameter(np.ones((k, 1, h)), decay=False)
        self.ln_beta = Parameter(np.zeros((k, 1, h)), decay=False)
        self.w2 = Parameter(rng.uniform(-b2, b2, (k, h, 2)))
        self.b2 = Parameter(rng.uniform(-b2, b2, (k, 1, 2)), decay=False)
        self.prior = Parameter(np.zeros((k, 1, 2)), decay=False)
        self.tau_r = tau_r
        self.dropout = dropout

    def scores(self, x_st: Tensor, x_ts: Tensor) -> Tensor:
        """(B, T, K, D) pair -> routing scores (B, T, K, 2)."""
        b, t, k, d = x_st.shape
        z = T.concat([x_st, x_ts], axis=-1).transpose(2, 0, 1, 3).reshape(k, b * t, 2 * d)
        hdn = T.layer_norm(z @ self.w1 + self.b1, self.ln_gamma, self.ln_beta)
        hdn = T.dropout(T.relu(hdn), self.dropout, training=self.training)
        r = hdn @ self.w2 + self.b2 + self.prior
        return r.reshape(k, b, t, 2).transpose(1, 2, 0, 3)

    def forward(self, x_st: Tensor, x_ts: Tensor, mask: Optional[np.ndarray] = None) -> tuple:
        """Return (fused (B, T, K, D), alpha (B, T, K, 2))."""
        alpha = route_weights(self.scores(x_st, x_ts), self.tau_r)
        fused = fuse(x_st, x_ts, alpha)
        if mask is not None:
            fused = fused * Tensor(np.asarray(mask, dtype=x_st.dtype)[..., None])
        return fused, alpha


def route_scores(router: EntityRouter, x_st, x_ts, entity: int) -> np.ndarray:
    """Scores for one ``(D,)`` slot pair through the router of ``entity``."""
    k = router.w1.shape[0]
    d = np.asarray(x_st.data if isinstance(x_st, Tensor) else x_st).shape[-1]
    st = np.zeros((1, 1, k, d), dtype=router.w1.dtype)
    ts = np.zeros_like(st)
    st[0, 0, entity] = x_st.data if isinstance(x_st, Tensor) else x_st
    ts[0, 0, entity] = x_ts.data if isinstance(x_ts, Tensor) else x_ts
    with T.no_grad():
        r = router.scores(Tensor(st), Tensor(ts))
    return r.data[0, 0, entity]


def routing_statistics(alpha: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean (alpha_st, alpha_ts) per entity over valid slots -> (K, 2)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)[..., None]
    k = alpha.shape[-2]
    tot = (alpha * m).reshape(-1, k, 2).sum(axis=0)
    cnt = m.reshape(-1, k, 1).sum(axis=0)
    return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
