"""Consistency loss between the two paths, pooling, classifier head and the total objective."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Dropout, Linear, Module
from .tensor import Tensor

TAU_MAC = 0.07
LAMBDA_MAC = 0.1
_NEG = -1e9


def project_normalize(x: Tensor) -> Tensor:
    return T.l2_normalize(x, eps=1e-8)


def mac_term(z_st_it: Tensor, z_ts_row: Tensor, t: int, tau: float = TAU_MAC) -> Tensor:
    """-log softmax_j(z_st . z_ts[j] / tau) evaluated at j = t, for one entity slot."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    d = z_st_it.shape[-1]
    sims = T.scale(z_ts_row @ z_st_it.reshape(d, 1), 1.0 / tau).reshape(1, z_ts_row.shape[0])
    pick = np.zeros((1, z_ts_row.shape[0]), dtype=sims.dtype)
    pick[0, t] = 1.0
    return T.neg(T.sum(T.log_softmax(sims) * Tensor(pick)))


def _diag_nll(sims: Tensor, key_mask: Optional[np.ndarray]) -> Tensor:
    """sims (..., L, L) -> -log_softmax over the last axis at the diagonal, (..., L)."""
    length = sims.shape[-1]
    eye = np.eye(length, dtype=sims.dtype)
    if key_mask is not None:
        # the positive pair always stays in the denominator
        bias = np.where(np.asarray(key_mask, dtype=bool) | eye.astype(bool), 0.0, _NEG).astype(sims.dtype)
        sims = sims + Tensor(np.broadcast_to(bias, sims.shape).copy())
    return T.neg(T.sum(T.log_softmax(sims) * Tensor(eye), axis=-1))


def mac_losses(z_st: Tensor, z_ts: Tensor, mask: Optional[np.ndarray] = None, tau: float = TAU_MAC,
               level: str = "video", symmetric: bool = False) -> Tensor:
    """Per-slot consistency terms (B, T, K).

    ``level="video"`` contrasts each ST slot with the TS features of the same
    entity at every frame; ``level="frame"`` instead contrasts with the TS
    features of every entity in the same frame.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    b, t, k, d = z_st.shape
    m = None if mask is None else np.asarray(mask, dtype=bool)

    def one_way(q: Tensor, kv: Tensor) -> Tensor:
        if level == "video":
            qq = q.transpose(0, 2, 1, 3)  # (B, K, T, D)
            kk = kv.transpose(0, 2, 3, 1)  # (B, K, D, T)
            key = None if m is None else m.transpose(0, 2, 1)[:, :, None, :]
            nll = _diag_nll(T.scale(qq @ kk, 1.0 / tau), key)  # (B, K, T)
            return nll.transpose(0, 2, 1)
        if level == "frame":
            key = None if m is None else m[:, :, None, :]
            return _diag_nll(T.scale(q @ kv.transpose(0, 1, 3, 2), 1.0 / tau), key)  # (B, T, K)
        raise ValueError(f"unknown MAC level {level!r}")

    out = one_way(z_st, z_ts)
    if symmetric:
        out = T.scale(out + one_way(z_ts, z_st), 0.5)
    return out


def mac_total(z_st: Tensor, z_ts: Tensor, conf, mask: Optional[np.ndarray] = None, tau: float = TAU_MAC,
              level: str = "video", symmetric: bool = False) -> Tensor:
    """Confidence-weighted mean of the slot terms per clip, averaged over the batch.

    Clips whose confidences sum to zero contribute zero.
    """
    conf = np.asarray(conf, dtype=np.float64)
    terms = mac_losses(z_st, z_ts, mask, tau, level, symmetric)
    b = conf.shape[0]
    tot = conf.reshape(b, -1).sum(axis=1)
    weights = np.where(tot[:, None, None] > 0, conf / np.where(tot > 0, tot, 1.0)[:, None, None], 0.0) / b
    return T.sum(terms * Tensor(weights.astype(terms.dtype)))


def entity_pool(x_fused: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean over valid (t, k) slots per sample -> (B, D); all-masked samples give zeros."""
    b, t, k, d = x_fused.shape
    if mask is None:
        return T.mean(x_fused.reshape(b, t * k, d), axis=1)
    m = np.asarray(mask, dtype=np.float64).reshape(b, t * k)
    w = m / np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return T.sum(x_fused.reshape(b, t * k, d) * Tensor(w[..., None].astype(x_fused.dtype)), axis=1)


class FusionClassifier(Module):
    """Linear(C_g + D -> 512) -> GELU -> Dropout(0.5) -> Linear(512 -> 256) -> GELU -> Linear(256 -> C).

    With ``input_norm`` the concatenated features are batch-standardised first.
    """

    def __init__(self, d_in: int, num_classes: int, rng: np.random.Generator, hidden=(512, 256),
                 dropout: float = 0.5, input_norm: bool = True):
        self.norm = BatchNorm(d_in) if input_norm else None
        self.fc1 = Linear(d_in, hidden[0], rng)
        self.drop = Dropout(dropout)
        self.fc2 = Linear(hidden[0], hidden[1], rng)
        self.fc3 = Linear(hidden[1], num_classes, rng)

    def forward(self, f_final: Tensor) -> Tensor:
        if self.norm is not None:
            f_final = self.norm(f_final)
        h = self.drop(T.gelu(self.fc1(f_final)))
        return self.fc3(T.gelu(self.fc2(h)))


def fuse_classify(classifier: FusionClassifier, f_cnn: Optional[Tensor], f_entity: Optional[Tensor]) -> Tensor:
    parts = [p for p in (f_cnn, f_entity) if p is not None]
    f_final = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
    return classifier(f_final)


def cross_entropy(logits: Tensor, y) -> Tensor:
    y = np.asarray(y, dtype=np.int64)
    n, c = logits.shape
    if y.shape != (n,):
        raise T.ShapeError(f"cross_entropy: {n} logits rows but labels of shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), y] = 1.0 / n
    return T.neg(T.sum(T.log_softmax(logits) * Tensor(onehot)))


@dataclass
class LossReport:
    ce: float
    mac: float
    total: float
    lam: float
    per_entity_mac: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    loss: Optional[Tensor] = field(default=None, repr=False)


def total_loss(logits: Tensor, y, mac: Optional[Tensor] = None, lam: float = LAMBDA_MAC) -> LossReport:
    ce = cross_entropy(logits, y)
    mac_v = 0.0 if mac is None else float(mac.data)
    loss = ce if mac is None or lam == 0.0 else ce + T.scale(mac, lam)
    ce_v = float(ce.data)
    return LossReport(ce=ce_v, mac=mac_v, total=ce_v + lam * mac_v, lam=lam, loss=loss)
