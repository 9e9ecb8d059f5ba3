"""Convolutional backbone with temporal shift and the spatial entity module.

Feature maps are channel-last: a clip is ``(B, T, H', W', C')``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Module, Parameter
from .pose import EntityBox
from .tensor import Tensor


# ----------------------------------------------------------------------------
# temporal shift
# ----------------------------------------------------------------------------

def shift_partition(channels: int, shift_frac: float) -> tuple:
    """(forward, backward, static) channel counts."""
    if not 0.0 <= shift_frac <= 0.5:
        raise ValueError(f"shift_frac must lie in [0, 0.5], got {shift_frac}")
    fold = int(math.floor(shift_frac * channels))
    return fold, fold, channels - 2 * fold


@T.register("temporal_shift")
def temporal_shift(x: Tensor, shift_frac: float = 0.125) -> Tensor:
    """Shift the first channel fold t -> t+1 and the second t -> t-1, zero-filled.

    ``x`` has shape ``(B, T, ..., C)``.
    """
    fold, _, _ = shift_partition(x.shape[-1], shift_frac)
    if x.shape[1] < 2 or fold == 0:
        return x
    d = x.data
    out = np.empty_like(d)
    out[..., 2 * fold:] = d[..., 2 * fold:]
    out[:, 0, ..., :fold] = 0
    out[:, 1:, ..., :fold] = d[:, :-1, ..., :fold]
    out[:, -1, ..., fold:2 * fold] = 0
    out[:, :-1, ..., fold:2 * fold] = d[:, 1:, ..., fold:2 * fold]

    def bw(g):
        gi = np.empty_like(g)
        gi[..., 2 * fold:] = g[..., 2 * fold:]
        gi[:, -1, ..., :fold] = 0
        gi[:, :-1, ..., :fold] = g[:, 1:, ..., :fold]
        gi[:, 0, ..., fold:2 * fold] = 0
        gi[:, 1:, ..., fold:2 * fold] = g[:, :-1, ..., fold:2 * fold]
        return (gi,)

    return T._result("temporal_shift", out, (x,), bw)


class Conv2d(Module):
    """3x3 convolution on channel-last maps via im2col."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator, kernel: int = 3):
        fan_in = kernel * kernel * c_in
        self.weight = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, c_out)))
        self.bias = Parameter(np.zeros(c_out), decay=False)
        self.stride = stride
        self.kernel = kernel

    def forward(self, x: Tensor) -> Tensor:
        cols = T.unfold2d(x, kernel=self.kernel, stride=self.stride, pad=self.kernel // 2)
        return cols @ self.weight + self.bias


class Backbone(Module):
    """Four 3x3 conv blocks (conv -> per-position channel LayerNorm -> GELU); temporal shift
    precedes blocks 2-4.  Strides (2, 2, 2, 1) give a total stride of 8.
    """

    def __init__(self, channels: Sequence[int] = (16, 32, 48, 64), strides: Sequence[int] = (2, 2, 2, 1),
                 shift_frac: float = 0.125, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        chans = [3, *channels]
        self.blocks = [Conv2d(chans[i], chans[i + 1], strides[i], rng) for i in range(len(channels))]
        self.norms = [LayerNorm(c) for c in channels]
        self.shift_frac = shift_frac
        self.stride = int(np.prod(strides))
        self.out_channels = chans[-1]

    def forward(self, frames: Tensor) -> tuple:
        """frames (B, T, H, W, 3) in [0, 1] -> (maps (B, T, H', W', C'), f_cnn (B, C'))."""
        b, t, h, w, c = frames.shape
        if h % self.stride or w % self.stride:
            raise T.ShapeError(f"backbone: frame size {h}x{w} not divisible by stride {self.stride}")
        x = frames.reshape(b * t, h, w, c)
        for i, conv in enumerate(self.blocks):
            if i > 0 and self.shift_frac > 0:
                x = x.reshape(b, t, *x.shape[1:])
                x = temporal_shift(x, self.shift_frac)
                x = x.reshape(b * t, *x.shape[2:])
            x = T.gelu(self.norms[i](conv(x)))
        maps = x.reshape(b, t, *x.shape[1:])
        f_cnn = T.mean(maps.reshape(b, t * x.shape[1] * x.shape[2], self.out_channels), axis=1)
        return maps, f_cnn


# ----------------------------------------------------------------------------
# ROIAlign
# ----------------------------------------------------------------------------

def _bilinear_taps(y: np.ndarray, x: np.ndarray, h: int, w: int):
    """Four (index, weight) taps per sample point in index coordinates."""
    outside = (y < -1.0) | (y > h) | (x < -1.0) | (x > w)
    y = np.clip(y, 0.0, None)
    x = np.clip(x, 0.0, None)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y_edge = y0 >= h - 1
    x_edge = x0 >= w - 1
    y0 = np.where(y_edge, h - 1, y0)
    x0 = np.where(x_edge, w - 1, x0)
    y = np.where(y_edge, y0, y)
    x = np.where(x_edge, x0, x)
    y1 = np.where(y_edge, y0, y0 + 1)
    x1 = np.where(x_edge, x0, x0 + 1)
    ly, lx = y - y0, x - x0
    hy, hx = 1.0 - ly, 1.0 - lx
    keep = ~outside
    idx = (y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1)
    wts = (hy * hx * keep, hy * lx * keep, ly * hx * keep, ly * lx * keep)
    return idx, wts


def roi_sampling_matrix(boxes: np.ndarray, valid: np.ndarray, feat_hw: tuple, stride: float = 8.0,
                        out_size: int = 4, samples_per_bin: int = 2) -> np.ndarray:
    """Linear map from a flattened feature map to ROIAlign bins.

    ``boxes`` are ``(..., 4)`` pixel boxes ``(x0, y0, x1, y1)``; the result has
    shape ``(..., out_size**2, H'*W')`` and rows of invalid boxes are zero.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    lead = boxes.shape[:-1]
    bx = boxes.reshape(-1, 4) / stride
    ok = np.asarray(valid, dtype=bool).reshape(-1)
    h, w = feat_hw
    p, s = out_size, samples_per_bin
    n = bx.shape[0]
    frac = (np.arange(p)[:, None] + (np.arange(s)[None, :] + 0.5) / s).reshape(-1)  # p*s offsets in bin units
    bw = (bx[:, 2] - bx[:, 0]) / p
    bh = (bx[:, 3] - bx[:, 1]) / p
    # index coordinates use pixel centres, hence the half-cell shift
    xs = bx[:, 0:1] + frac[None, :] * bw[:, None] - 0.5  # (n, p*s)
    ys = bx[:, 1:2] + frac[None, :] * bh[:, None] - 0.5
    yy = np.broadcast_to(ys[:, :, None], (n, p * s, p * s))
    xx = np.broadcast_to(xs[:, None, :], (n, p * s, p * s))
    idx, wts = _bilinear_taps(yy, xx, h, w)
    # sample (iy, ix) belongs to bin (iy // s, ix // s)
    bin_of = (np.arange(p * s)[:, None] // s) * p + (np.arange(p * s)[None, :] // s)
    mat = np.zeros((n, p * p, h * w))
    rows = np.broadcast_to(np.arange(n)[:, None, None], (n, p * s, p * s))
    bins = np.broadcast_to(bin_of[None], (n, p * s, p * s))
    for ind, wt in zip(idx, wts):
        np.add.at(mat, (rows, bins, ind), wt / (s * s))
    mat[~ok] = 0.0
    return mat.reshape(*lead, p * p, h * w)


def roi_align(fm, box, out_size: int = 4, samples_per_bin: int = 2, stride: float = 8.0):
    """ROIAlign of one channel-last map ``(H', W', C')`` -> ``(P, P, C')``.

    ``box`` is an :class:`EntityBox` or ``(x0, y0, x1, y1)`` in pixels.  An
    invalid box yields a zero patch.  Accepts numpy arrays or tensors.
    """
    if isinstance(box, EntityBox):
        coords, ok = box.as_tuple(), box.valid
    else:
        coords, ok = tuple(box), True
    data = fm.data if isinstance(fm, Tensor) else np.asarray(fm)
    h, w, c = data.shape
    mat = roi_sampling_matrix(np.asarray([coords]), np.asarray([ok]), (h, w), stride, out_size, samples_per_bin)[0]
    if isinstance(fm, Tensor):
        out = Tensor(mat.astype(fm.dtype)) @ fm.reshape(h * w, c)
        return out.reshape(out_size, out_size, c)
    return (mat @ data.reshape(h * w, c)).reshape(out_size, out_size, c)


def fixed_region_boxes(width: int, height: int, k: int) -> np.ndarray:
    """Keypoint-free stand-in: ``k`` equal horizontal bands (x0, y0, x1, y1)."""
    edges = np.linspace(0.0, float(height), k + 1)
    return np.array([[0.0, edges[i], float(width), edges[i + 1]] for i in range(k)])


# ----------------------------------------------------------------------------
# entity refinement and assembly
# ----------------------------------------------------------------------------

class EntityRefine(Module):
    """Per-entity depthwise 3x3 + pointwise 1x1 conv, GELU, average pool, identity embedding."""

    def __init__(self, num_entities: int, channels: int, dim: int, rng: np.random.Generator):
        k, c = num_entities, channels
        self.dw_weight = Parameter(rng.uniform(-1.0 / 3.0, 1.0 / 3.0, (k, 1, 9, c)))
        self.dw_bias = Parameter(np.zeros((k, 1, c)), decay=False)
        self.pw_weight = Parameter(rng.normal(0.0, math.sqrt(2.0 / c), (k, c, dim)))
        self.pw_bias = Parameter(np.zeros((k, 1, dim)), decay=False)
        self.pos = Parameter(rng.normal(0.0, 0.02, (k, dim)), decay=False)
        self.dim = dim

    def forward(self, patches: Tensor) -> Tensor:
        """patches (N, K, P, P, C) -> (N, K, D)."""
        n, k, p, _, c = patches.shape
        cols = T.unfold2d(patches.reshape(n * k, p, p, c), kernel=3, stride=1, pad=1)
        cols = cols.reshape(n, k, p * p, 9, c)
        dw = T.sum(cols * self.dw_weight, axis=3) + self.dw_bias  # (N, K, PP, C)
        x = dw.transpose(1, 0, 2, 3).reshape(k, n * p * p, c)
        x = T.gelu(x @ self.pw_weight + self.pw_bias)
        x = T.mean(x.reshape(k, n, p * p, self.dim), axis=2)  # (K, N, D)
        return x.transpose(1, 0, 2) + self.pos


def entity_refine(refiner: EntityRefine, patch, entity_id: int) -> Tensor:
    """Refine one ``(P, P, C')`` patch with the parameters of ``entity_id`` -> (D,)."""
    patch = patch if isinstance(patch, Tensor) else Tensor(np.asarray(patch))
    k = refiner.pos.shape[0]
    if not 0 <= entity_id < k:
        raise ValueError(f"entity_id {entity_id} out of range for {k} entities")
    p, _, c = patch.shape
    zeros = np.zeros((1, k, p, p, c), dtype=patch.dtype)
    slot = np.zeros((1, k, 1, 1, 1), dtype=patch.dtype)
    slot[0, entity_id] = 1.0
    batch = (patch.reshape(1, 1, p, p, c) + Tensor(zeros)) * Tensor(slot)
    return _pick_row(refiner(batch), entity_id)


def _pick_row(x: Tensor, i: int) -> Tensor:
    onehot = np.zeros((1, x.shape[1], 1), dtype=x.dtype)
    onehot[0, i, 0] = 1.0
    return T.sum(x * Tensor(onehot), axis=(0, 1))


@dataclass
class EntityTensor:
    """Entity features ``X`` (B, T, K, D) with validity mask and confidences (B, T, K)."""

    X: Tensor
    mask: np.ndarray
    conf: np.ndarray


class SpatialEntityModule(Module):
    def __init__(self, num_entities: int, channels: int, dim: int, rng: np.random.Generator,
                 out_size: int = 4, samples_per_bin: int = 2, stride: float = 8.0):
        self.refine = EntityRefine(num_entities, channels, dim, rng)
        self.out_size = out_size
        self.samples_per_bin = samples_per_bin
        self.stride = stride

    def forward(self, maps: Tensor, boxes: np.ndarray, mask: np.ndarray, conf: np.ndarray) -> EntityTensor:
        """maps (B, T, H', W', C'); boxes (B, T, K, 4) pixels; mask/conf (B, T, K)."""
        b, t, h, w, c = maps.shape
        k = boxes.shape[2]
        p = self.out_size
        mask = np.asarray(mask, dtype=bool)
        mat = roi_sampling_matrix(boxes, mask, (h, w), self.stride, p, self.samples_per_bin)
        mat = Tensor(mat.reshape(b * t, k * p * p, h * w).astype(maps.dtype))
        rois = mat @ maps.reshape(b * t, h * w, c)
        x = self.refine(rois.reshape(b * t, k, p, p, c)).reshape(b, t, k, self.refine.dim)
        x = x * Tensor(mask[..., None].astype(maps.dtype))
        conf = np.where(mask, np.asarray(conf, dtype=np.float64), 0.0)
        return EntityTensor(x, mask, conf)


def assemble_entity_tensor(sem: SpatialEntityModule, maps: Tensor, boxes: Sequence[Sequence[Sequence[EntityBox]]]) -> EntityTensor:
    """Build X from per-video ``T x K`` :class:`EntityBox` grids (one per batch element)."""
    arr = np.array([[[b.as_tuple() for b in row] for row in vid] for vid in boxes], dtype=np.float64)
    mask = np.array([[[b.valid for b in row] for row in vid] for vid in boxes], dtype=bool)
    conf = np.array([[[b.confidence for b in row] for row in vid] for vid in boxes], dtype=np.float64)
    return sem(maps, arr.reshape(mask.shape + (4,)), mask, conf)
