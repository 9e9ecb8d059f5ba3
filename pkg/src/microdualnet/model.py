"""The assembled recognizer and its ablation switches."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from . import tensor as T
from .backbone import Backbone, SpatialEntityModule, fixed_region_boxes
from .dualpath import DualPath, TransformerConfig
from .nn import Linear, Module
from .objectives import (LAMBDA_MAC, TAU_MAC, FusionClassifier, LossReport, entity_pool, fuse_classify,
                         mac_losses, mac_total, project_normalize, total_loss)
from .pose import EntityDef, default_entity_defs
from .routing import TAU_ROUTING, EntityRouter, fuse
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_classes: int = 8
    entity_set: str = "ma52-like"
    backbone_channels: tuple = (16, 32, 48, 64)
    backbone_strides: tuple = (2, 2, 2, 1)
    shift_frac: float = 0.125
    dim: int = 64
    heads: int = 8
    layers: int = 3
    ffn_dim: int = 256
    dropout: float = 0.1
    roi_size: int = 4
    roi_samples: int = 2
    tau_r: float = TAU_ROUTING
    tau_mac: float = TAU_MAC
    lam: float = LAMBDA_MAC
    cls_hidden: tuple = (512, 256)
    cls_dropout: float = 0.5
    cls_input_norm: bool = True
    router_dropout: float = 0.1
    # ablation switches
    st_only: bool = False
    ts_only: bool = False
    no_mac: bool = False
    no_routing: bool = False
    shared_transformers: bool = False
    frame_level_mac: bool = False
    symmetric_mac: bool = False
    projection_head: bool = False
    no_entities: bool = False
    fixed_regions: bool = False

    def __post_init__(self):
        self.backbone_channels = tuple(self.backbone_channels)
        self.backbone_strides = tuple(self.backbone_strides)
        self.cls_hidden = tuple(self.cls_hidden)
        if self.st_only and self.ts_only:
            raise ValueError("st_only and ts_only are mutually exclusive")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")

    @property
    def dual(self) -> bool:
        return not (self.st_only or self.ts_only or self.no_entities)

    @property
    def uses_mac(self) -> bool:
        return self.dual and not self.no_mac and self.lam > 0

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(self.layers, self.heads, self.dim, self.ffn_dim, self.dropout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    """Model inputs for B clips: frames (B, T, H, W, 3); boxes (B, T, K, 4); mask, conf (B, T, K)."""

    frames: np.ndarray
    boxes: np.ndarray
    mask: np.ndarray
    conf: np.ndarray
    labels: Optional[np.ndarray] = None
    body_labels: Optional[np.ndarray] = None
    ids: List[str] = field(default_factory=list)


@dataclass
class ModelOutput:
    logits: Tensor
    x_st: Optional[Tensor] = None
    x_ts: Optional[Tensor] = None
    alpha: Optional[Tensor] = None
    mac: Optional[Tensor] = None
    mask: Optional[np.ndarray] = None
    conf: Optional[np.ndarray] = None


class MicroDualNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.defs: List[EntityDef] = default_entity_defs(cfg.entity_set)
        k = len(self.defs)
        self.backbone = Backbone(cfg.backbone_channels, cfg.backbone_strides, cfg.shift_frac, rng)
        c = self.backbone.out_channels
        self.sem = self.paths = self.router = None
        self.proj_st = self.proj_ts = None
        if not cfg.no_entities:
            self.sem = SpatialEntityModule(k, c, cfg.dim, rng, cfg.roi_size, cfg.roi_samples, self.backbone.stride)
            self.paths = DualPath(cfg.transformer(), rng, max(6, k), cfg.shared_transformers,
                                  use_st=not cfg.ts_only, use_ts=not cfg.st_only)
            if cfg.dual and not cfg.no_routing:
                self.router = EntityRouter(cfg.dim, k, rng, cfg.tau_r, cfg.router_dropout)
            if cfg.uses_mac and cfg.projection_head:
                self.proj_st = Linear(cfg.dim, cfg.dim, rng)
                self.proj_ts = Linear(cfg.dim, cfg.dim, rng)
        d_in = c + (0 if cfg.no_entities else cfg.dim)
        self.classifier = FusionClassifier(d_in, cfg.num_classes, rng, cfg.cls_hidden, cfg.cls_dropout,
                                           cfg.cls_input_norm)

    @property
    def num_entities(self) -> int:
        return len(self.defs)

    def region_inputs(self, batch: Batch) -> tuple:
        """Boxes, mask and confidences actually fed to the entity module."""
        if not self.cfg.fixed_regions:
            return batch.boxes, batch.mask, batch.conf
        b, t, h, w, _ = batch.frames.shape
        k = self.num_entities
        boxes = np.broadcast_to(fixed_region_boxes(w, h, k), (b, t, k, 4)).copy()
        return boxes, np.ones((b, t, k), dtype=bool), np.ones((b, t, k))

    def forward(self, batch: Batch) -> ModelOutput:
        cfg = self.cfg
        frames = Tensor(np.asarray(batch.frames, dtype=T.get_default_dtype()))
        maps, f_cnn = self.backbone(frames)
        if cfg.no_entities:
            return ModelOutput(fuse_classify(self.classifier, f_cnn, None))
        boxes, mask, conf = self.region_inputs(batch)
        ent = self.sem(maps, boxes, mask, conf)
        paths = self.paths(ent.X, self.defs, ent.mask)
        x_st, x_ts = paths.X_st, paths.X_ts
        alpha = mac = None
        if x_st is not None and x_ts is not None:
            if self.router is not None:
                fused, alpha = self.router(x_st, x_ts, ent.mask)
            else:
                fused = fuse(x_st, x_ts, Tensor(np.full(x_st.shape[:3] + (2,), 0.5, dtype=x_st.dtype)))
            if cfg.uses_mac:
                z_st = x_st if self.proj_st is None else self.proj_st(x_st)
                z_ts = x_ts if self.proj_ts is None else self.proj_ts(x_ts)
                mac = mac_total(project_normalize(z_st), project_normalize(z_ts), ent.conf, ent.mask,
                                cfg.tau_mac, "frame" if cfg.frame_level_mac else "video", cfg.symmetric_mac)
        else:
            fused = x_st if x_st is not None else x_ts
        logits = fuse_classify(self.classifier, f_cnn, entity_pool(fused, ent.mask))
        return ModelOutput(logits, x_st, x_ts, alpha, mac, ent.mask, ent.conf)

    def loss(self, batch: Batch, out: Optional[ModelOutput] = None) -> LossReport:
        out = out if out is not None else self.forward(batch)
        rep = total_loss(out.logits, batch.labels, out.mac, self.cfg.lam if out.mac is not None else 0.0)
        if out.alpha is not None:
            rep.alpha = out.alpha.data.copy()
        if out.mac is not None:
            with T.no_grad():
                z_st = project_normalize(out.x_st if self.proj_st is None else self.proj_st(out.x_st))
                z_ts = project_normalize(out.x_ts if self.proj_ts is None else self.proj_ts(out.x_ts))
                terms = mac_losses(z_st, z_ts, out.mask, self.cfg.tau_mac,
                                   "frame" if self.cfg.frame_level_mac else "video", self.cfg.symmetric_mac).data
            w = np.asarray(out.conf, dtype=np.float64)
            tot = w.reshape(w.shape[0], -1).sum(axis=1)
            w = np.where(tot[:, None, None] > 0, w / np.where(tot > 0, tot, 1.0)[:, None, None], 0.0) / w.shape[0]
            rep.per_entity_mac = (terms * w).sum(axis=(0, 1))
        return rep
