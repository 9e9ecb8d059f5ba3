"""Spatial and temporal entity transformers and the two processing orders.

Both transformers use post-norm residual blocks and add their position
encoding once, before the first layer.  Masked ``(b, t, k)`` slots are kept
out of attention keys and forced back to zero after every layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadSelfAttention, Parameter
from .pose import EntityDef
from .tensor import Tensor

NUM_HIERARCHY_LEVELS = 3


@dataclass
class TransformerConfig:
    layers: int = 3
    heads: int = 8
    model_dim: int = 256
    ffn_dim: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")


@dataclass
class PathOutput:
    X_st: Optional[Tensor]
    X_ts: Optional[Tensor]


def _mask_tensor(mask: Optional[np.ndarray], shape: tuple, dtype) -> Optional[Tensor]:
    if mask is None:
        return None
    return Tensor(np.asarray(mask, dtype=dtype).reshape(shape))


class EncoderLayer(Module):
    """``x = LN(x + MHSA(x)); x = LN(x + FFN(x))``."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        self.attn = MultiHeadSelfAttention(cfg.model_dim, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(cfg.model_dim, cfg.ffn_dim, cfg.dropout, rng)
        self.norm2 = LayerNorm(cfg.model_dim)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = self.norm1(x + self.attn(x, mask))
        return self.norm2(x + self.ffn(x))


class SpatialPE(Module):
    """Learnable per-entity plus per-hierarchy-level offsets."""

    def __init__(self, dim: int, rng: np.random.Generator, max_entities: int = 6):
        self.entity = Parameter(rng.normal(0.0, 0.02, (max_entities, dim)), decay=False)
        self.level = Parameter(rng.normal(0.0, 0.02, (NUM_HIERARCHY_LEVELS, dim)), decay=False)

    def offset(self, defs: Sequence[EntityDef]) -> Tensor:
        ids = [d.id for d in defs]
        levels = [d.hierarchy_level for d in defs]
        return T.embedding(self.entity, ids) + T.embedding(self.level, levels)

    def forward(self, x_t: Tensor, defs: Sequence[EntityDef]) -> Tensor:
        """x_t (..., K, D) -> x_t + SPE."""
        if x_t.shape[-2] != len(defs):
            raise T.ShapeError(f"spatial_pe: {x_t.shape[-2]} entities but {len(defs)} defs")
        return x_t + self.offset(defs)


def sinusoidal_table(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Row t holds (sin, cos)(t / 10000**(2m/dim)) in channels (2m, 2m+1)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    m = np.arange((dim + 1) // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * m / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle)[:, : (dim + 1) // 2]
    table[:, 1::2] = np.cos(angle)[:, : dim // 2]
    return table.astype(dtype)


def temporal_pe(x_i: Tensor) -> Tensor:
    """x_i (..., T, D) -> x_i + sinusoidal(T, D)."""
    t, d = x_i.shape[-2:]
    return x_i + Tensor(sinusoidal_table(t, d, x_i.dtype))


class SpatialTransformer(Module):
    """Attention across the K entities of each frame."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, max_entities: int = 6):
        self.pe = SpatialPE(cfg.model_dim, rng, max_entities)
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.layers)]

    def forward(self, x: Tensor, defs: Sequence[EntityDef], mask: Optional[np.ndarray] = None) -> Tensor:
        b, t, k, d = x.shape
        h = x.reshape(b * t, k, d)
        fmask = None if mask is None else np.asarray(mask, dtype=bool).reshape(b * t, k)
        keep = _mask_tensor(fmask, (b * t, k, 1), x.dtype)
        h = self.pe(h, defs)
        for layer in self.layers:
            h = layer(h, fmask)
            if keep is not None:
                h = h * keep
        return h.reshape(b, t, k, d)


class TemporalTransformer(Module):
    """Bidirectional attention across the T frames of each entity track."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.layers)]

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        b, t, k, d = x.shape
        h = x.transpose(0, 2, 1, 3).reshape(b * k, t, d)
        tmask = None if mask is None else np.asarray(mask, dtype=bool).transpose(0, 2, 1).reshape(b * k, t)
        keep = _mask_tensor(tmask, (b * k, t, 1), x.dtype)
        h = temporal_pe(h)
        for layer in self.layers:
            h = layer(h, tmask)
            if keep is not None:
                h = h * keep
        return h.reshape(b, k, t, d).transpose(0, 2, 1, 3)


class ResidualMLP(Module):
    """Two-layer D -> D map with GELU, the side branch of each path."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class DualPath(Module):
    """ST (spatial then temporal) and TS (temporal then spatial) paths.

    With ``shared`` the two paths reuse one spatial and one temporal stack.
    ``use_st`` / ``use_ts`` drop a path entirely for single-path ablations.
    """

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, max_entities: int = 6,
                 shared: bool = False, use_st: bool = True, use_ts: bool = True):
        if not (use_st or use_ts):
            raise ValueError("at least one path must be enabled")
        self.use_st, self.use_ts, self.shared = use_st, use_ts, shared
        self.st_spatial = self.st_temporal = self.mlp_s = None
        self.ts_spatial = self.ts_temporal = self.mlp_t = None
        if use_st:
            self.st_spatial = SpatialTransformer(cfg, rng, max_entities)
            self.st_temporal = TemporalTransformer(cfg, rng)
            self.mlp_s = ResidualMLP(cfg.model_dim, rng)
        if use_ts:
            if shared and use_st:
                self.ts_spatial, self.ts_temporal = None, None
            else:
                self.ts_spatial = SpatialTransformer(cfg, rng, max_entities)
                self.ts_temporal = TemporalTransformer(cfg, rng)
            self.mlp_t = ResidualMLP(cfg.model_dim, rng)

    def _ts_stacks(self):
        if self.ts_spatial is None:
            return self.st_spatial, self.st_temporal
        return self.ts_spatial, self.ts_temporal

    def st_path(self, x: Tensor, defs: Sequence[EntityDef], mask: Optional[np.ndarray] = None) -> Tensor:
        keep = _mask_tensor(mask, x.shape[:3] + (1,), x.dtype)
        spatial = self.st_spatial(x, defs, mask) + self.mlp_s(x)
        if keep is not None:
            spatial = spatial * keep
        return self.st_temporal(spatial, mask)

    def ts_path(self, x: Tensor, defs: Sequence[EntityDef], mask: Optional[np.ndarray] = None) -> Tensor:
        spatial_t, temporal_t = self._ts_stacks()
        keep = _mask_tensor(mask, x.shape[:3] + (1,), x.dtype)
        temporal = temporal_t(x, mask) + self.mlp_t(x)
        if keep is not None:
            temporal = temporal * keep
        return spatial_t(temporal, defs, mask)

    def forward(self, x: Tensor, defs: Sequence[EntityDef], mask: Optional[np.ndarray] = None) -> PathOutput:
        x_st = self.st_path(x, defs, mask) if self.use_st else None
        x_ts = self.ts_path(x, defs, mask) if self.use_ts else None
        return PathOutput(x_st, x_ts)
