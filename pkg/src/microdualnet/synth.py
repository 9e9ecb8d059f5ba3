"""Procedural stick-figure micro-action clips.

Position classes move one body family to a target configuration and hold it.
Motion classes oscillate one body family around the rest pose with an integer
number of cycles per clip, so every motion class has the same mean pose and
differs from the others only in its temporal pattern.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .pose import BODY25_LIMBS, NUM_JOINTS, FrameSkeleton, dump_keypoints

VIDEO_MAGIC = b"MDNVID1"

# rest pose in unit body coordinates (x right, y down); index = BODY-25 joint
REST_POSE = np.array([
    (0.50, 0.16), (0.50, 0.27), (0.40, 0.29), (0.36, 0.43), (0.35, 0.56),
    (0.60, 0.29), (0.64, 0.43), (0.65, 0.56), (0.50, 0.57), (0.44, 0.57),
    (0.43, 0.73), (0.43, 0.88), (0.56, 0.57), (0.57, 0.73), (0.57, 0.88),
    (0.47, 0.14), (0.53, 0.14), (0.45, 0.16), (0.55, 0.16), (0.60, 0.93),
    (0.62, 0.92), (0.56, 0.91), (0.40, 0.93), (0.38, 0.92), (0.44, 0.91),
])

HEAD_JOINTS = (0, 15, 16, 17, 18)
R_FOOT = (11, 22, 23, 24)

BODY_FAMILIES = ("head", "hand", "arm", "leg")


@dataclass(frozen=True)
class ActionSpec:
    """One synthetic class.

    ``offsets`` maps joint -> (dx, dy) target displacement for position
    classes, or joint -> oscillation direction for motion classes, in unit
    body coordinates.
    """

    action_id: int
    name: str
    body_level_id: int
    kind: str
    offsets: Dict[int, tuple]
    amplitude: float = 0.0
    frequency: int = 0
    duration: int = 8
    settle_frames: int = 2

    def __post_init__(self):
        if self.kind not in ("position", "motion"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind == "motion" and self.frequency <= 0:
            raise ValueError(f"motion class {self.name} needs a positive frequency")
        if self.kind == "position" and 2 * (self.duration - self.settle_frames) < self.duration:
            raise ValueError(f"position class {self.name} must hold its target for half the clip")


def _to(joints: Sequence[int], targets: Sequence[tuple]) -> Dict[int, tuple]:
    return {j: (tx - REST_POSE[j][0], ty - REST_POSE[j][1]) for j, (tx, ty) in zip(joints, targets)}


def _shift(joints: Sequence[int], d: tuple) -> Dict[int, tuple]:
    return {j: d for j in joints}


def _swing(joints: Sequence[int], pivot: int) -> Dict[int, tuple]:
    """Small-angle rotation field about ``pivot``: amplitude is then the angle in radians."""
    px, py = REST_POSE[pivot]
    return {j: (-(REST_POSE[j][1] - py), REST_POSE[j][0] - px) for j in joints}


def builtin_specs(duration: int = 8) -> List[ActionSpec]:
    """Four position and four motion classes over four body families."""
    foot = _to((10,), ((0.39, 0.73),))
    foot.update(_shift(R_FOOT, (-0.08, -0.02)))
    return [
        ActionSpec(0, "hand-at-head", 0, "position", _to((6, 7), ((0.68, 0.17), (0.55, 0.07))), duration=duration),
        ActionSpec(1, "hand-at-face", 1, "position", _to((3, 4), ((0.37, 0.33), (0.47, 0.19))), duration=duration),
        ActionSpec(2, "arms-crossed-torso", 2, "position",
                   _to((3, 4, 6, 7), ((0.41, 0.42), (0.58, 0.41), (0.59, 0.42), (0.42, 0.41))), duration=duration),
        ActionSpec(3, "foot-forward", 3, "position", foot, duration=duration),
        ActionSpec(4, "head-shake", 0, "motion", _swing(HEAD_JOINTS, 1), amplitude=0.5, frequency=2,
                   duration=duration),
        ActionSpec(5, "finger-tap-proxy", 1, "motion", {4: (0.0, 1.0), 3: (0.0, 0.3)}, amplitude=0.1, frequency=3,
                   duration=duration),
        ActionSpec(6, "arm-wave", 2, "motion", {6: (0.5, -0.5), 7: (1.0, -1.0)}, amplitude=0.16, frequency=1,
                   duration=duration),
        ActionSpec(7, "leg-oscillation", 3, "motion", {10: (0.5, 0.0), **_shift((11, 22, 23, 24), (1.0, 0.0))},
                   amplitude=0.14, frequency=2, duration=duration),
    ]


def action_weight(spec: ActionSpec, n_frames: int, phase: float = 0.0) -> np.ndarray:
    """Per-frame scalar multiplying the action's joint offsets."""
    t = np.arange(n_frames, dtype=np.float64)
    if spec.kind == "position":
        ramp = np.minimum(1.0, (t + 1.0) / (spec.settle_frames + 1.0))
        return ramp
    return spec.amplitude * np.sin(2.0 * np.pi * spec.frequency * t / n_frames + phase)


def trajectory(spec: ActionSpec, n_frames: int, rest: np.ndarray = REST_POSE, phase: float = 0.0,
               target_scale: float = 1.0) -> np.ndarray:
    """(n_frames, 25, 2) unit-coordinate poses for one clip."""
    w = action_weight(spec, n_frames, phase)
    poses = np.repeat(rest[None].astype(np.float64), n_frames, axis=0)
    for j, (dx, dy) in spec.offsets.items():
        poses[:, j, 0] += w * dx * target_scale
        poses[:, j, 1] += w * dy * target_scale
    return poses


# ----------------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------------

_LIMB_COLORS = {
    "head": (0.95, 0.80, 0.65), "torso": (0.55, 0.55, 0.60),
    "rarm": (0.90, 0.30, 0.25), "larm": (0.30, 0.80, 0.35),
    "rleg": (0.25, 0.35, 0.90), "lleg": (0.85, 0.75, 0.20),
}


def _limb_group(a: int, b: int) -> str:
    pair = {a, b}
    if pair <= {0, 1, 15, 16, 17, 18}:
        return "head"
    if pair <= {2, 3, 4} or pair == {1, 2}:
        return "rarm"
    if pair <= {5, 6, 7} or pair == {1, 5}:
        return "larm"
    if pair <= {9, 10, 11, 22, 23, 24} or pair == {8, 9}:
        return "rleg"
    if pair <= {12, 13, 14, 19, 20, 21} or pair == {8, 12}:
        return "lleg"
    return "torso"


_LIMB_RGB = np.array([_LIMB_COLORS[_limb_group(a, b)] for a, b in BODY25_LIMBS])


def background_texture(height: int, width: int, rng: np.random.Generator, amplitude: float = 0.12) -> np.ndarray:
    """Smooth seeded noise around mid-grey, (H, W, 3) in [0, 1]."""
    coarse = rng.normal(0.0, 1.0, (height // 8 + 2, width // 8 + 2, 3))
    ys = np.linspace(0, coarse.shape[0] - 1.001, height)
    xs = np.linspace(0, coarse.shape[1] - 1.001, width)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None, None], (xs - x0)[None, :, None]
    c = coarse
    smooth = ((1 - fy) * (1 - fx) * c[y0][:, x0] + (1 - fy) * fx * c[y0][:, x0 + 1]
              + fy * (1 - fx) * c[y0 + 1][:, x0] + fy * fx * c[y0 + 1][:, x0 + 1])
    fine = rng.normal(0.0, 0.3, (height, width, 3))
    return np.clip(0.35 + amplitude * (smooth + fine), 0.0, 1.0)


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from pixel centres to segments a->b; a, b are (S, 2) -> (S, H, W)."""
    ax, ay = a[:, 0, None, None], a[:, 1, None, None]
    dx, dy = (b[:, 0] - a[:, 0])[:, None, None], (b[:, 1] - a[:, 1])[:, None, None]
    ll = dx * dx + dy * dy
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / np.where(ll > 0, ll, 1.0), 0.0, 1.0)
    cx, cy = ax + t * dx, ay + t * dy
    return np.sqrt((px - cx) ** 2 + (py - cy) ** 2)


def limb_radius(height: int) -> float:
    return max(1.0, height / 32.0)


def render_frame(pose: np.ndarray, height: int, width: int, texture: Optional[np.ndarray] = None,
                 thickness: Optional[float] = None) -> np.ndarray:
    """Anti-aliased stick figure over ``texture`` (or black), (H, W, 3) float in [0, 1].

    ``pose`` holds 25 pixel coordinates; they are clamped to the canvas.
    """
    pose = np.asarray(pose, dtype=np.float64).copy()
    pose[:, 0] = np.clip(pose[:, 0], 0.0, width - 1e-6)
    pose[:, 1] = np.clip(pose[:, 1], 0.0, height - 1e-6)
    radius = thickness if thickness is not None else limb_radius(height)
    py, px = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    img = np.zeros((height, width, 3)) if texture is None else np.array(texture, dtype=np.float64)
    a = pose[[i for i, _ in BODY25_LIMBS]]
    b = pose[[j for _, j in BODY25_LIMBS]]
    cover = np.clip(radius + 0.5 - _segment_distance(px, py, a, b), 0.0, 1.0)  # (S, H, W)
    for s in range(len(BODY25_LIMBS)):
        al = cover[s][..., None]
        img = al * _LIMB_RGB[s] + (1.0 - al) * img
    head_r = max(1.5, height / 24.0)
    d = np.sqrt((px - pose[0, 0]) ** 2 + (py - pose[0, 1]) ** 2)
    al = np.clip(head_r + 0.5 - d, 0.0, 1.0)[..., None]
    img = al * np.array(_LIMB_COLORS["head"]) + (1.0 - al) * img
    # redraw face joints so they stay visible on the disc
    face = [k for k, (i, j) in enumerate(BODY25_LIMBS) if {i, j} <= {0, 15, 16, 17, 18}]
    for s in face:
        al = cover[s][..., None]
        img = al * (0.5 * _LIMB_RGB[s]) + (1.0 - al) * img
    return img


def drawn_mask(pose: np.ndarray, height: int, width: int, thickness: Optional[float] = None) -> np.ndarray:
    """Pixels with nonzero coverage by any limb segment or the head disc."""
    pose = np.asarray(pose, dtype=np.float64).copy()
    pose[:, 0] = np.clip(pose[:, 0], 0.0, width - 1e-6)
    pose[:, 1] = np.clip(pose[:, 1], 0.0, height - 1e-6)
    radius = thickness if thickness is not None else limb_radius(height)
    py, px = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    a = pose[[i for i, _ in BODY25_LIMBS]]
    b = pose[[j for _, j in BODY25_LIMBS]]
    seg = (radius + 0.5 - _segment_distance(px, py, a, b) > 0).any(axis=0)
    head = np.sqrt((px - pose[0, 0]) ** 2 + (py - pose[0, 1]) ** 2) < max(1.5, height / 24.0) + 0.5
    return seg | head


# ----------------------------------------------------------------------------
# video files
# ----------------------------------------------------------------------------

def encode_video(frames: np.ndarray) -> bytes:
    """(T, H, W, 3) floats in [0, 1] -> MDNVID1 bytes (u64 extents T, 3, H, W; planar u8)."""
    arr = np.clip(np.rint(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)
    planar = np.ascontiguousarray(arr.transpose(0, 3, 1, 2))
    head = VIDEO_MAGIC + struct.pack("<4Q", *planar.shape)
    return head + planar.tobytes()


def decode_video(data: bytes) -> np.ndarray:
    """MDNVID1 bytes -> (T, H, W, 3) float32 in [0, 1]."""
    if data[:len(VIDEO_MAGIC)] != VIDEO_MAGIC:
        raise ValueError("not an MDNVID1 video")
    off = len(VIDEO_MAGIC)
    t, c, h, w = struct.unpack("<4Q", data[off:off + 32])
    body = np.frombuffer(data, dtype=np.uint8, offset=off + 32)
    if body.size != t * c * h * w:
        raise ValueError(f"video payload holds {body.size} bytes, expected {t * c * h * w}")
    return body.reshape(t, c, h, w).transpose(0, 2, 3, 1).astype(np.float32) / 255.0


def load_frames(path) -> np.ndarray:
    """Read an MDNVID1 file or a directory of RGB images (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        from PIL import Image

        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        return np.stack([np.asarray(Image.open(f).convert("RGB"), dtype=np.float32) / 255.0 for f in files])
    return decode_video(path.read_bytes())


# ----------------------------------------------------------------------------
# dataset generation
# ----------------------------------------------------------------------------

@dataclass
class Sample:
    frames: np.ndarray
    skeleton: List[FrameSkeleton]
    labels: tuple
    poses: np.ndarray = field(repr=False, default=None)


@dataclass
class GenConfig:
    canvas: int = 96
    n_frames: int = 8
    noise: float = 0.1
    kp_noise_px: float = 0.5
    subject_jitter: float = 0.012
    scale_range: tuple = (0.80, 0.98)
    shift_px: float = 0.06
    target_jitter: float = 0.25
    texture_amplitude: float = 0.06


def simulate_confidence(n: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """clip(1 - |N(0, noise)|, 0, 1) with dropouts (c = 0) at rate noise / 2."""
    if noise <= 0:
        return np.ones(n)
    c = np.clip(1.0 - np.abs(rng.normal(0.0, noise, n)), 0.0, 1.0)
    c[rng.random(n) < noise / 2.0] = 0.0
    return c


def make_sample(spec: ActionSpec, cfg: GenConfig, rng: np.random.Generator) -> Sample:
    size, n = cfg.canvas, cfg.n_frames
    rest = REST_POSE + rng.normal(0.0, cfg.subject_jitter, REST_POSE.shape)
    phase = rng.uniform(0.0, 2.0 * np.pi) if spec.kind == "motion" else 0.0
    amp_scale = 1.0 + rng.uniform(-cfg.target_jitter, cfg.target_jitter)
    unit = trajectory(spec, n, rest, phase, amp_scale)
    s = rng.uniform(*cfg.scale_range)
    off = rng.uniform(-cfg.shift_px, cfg.shift_px, 2)
    centre = np.array([0.5, 0.5])
    pix = ((unit - centre) * s + centre + off) * size
    texture = background_texture(size, size, rng, cfg.texture_amplitude)
    frames = np.stack([render_frame(p, size, size, texture) for p in pix])
    skeleton = []
    for p in pix:
        xy = p + rng.normal(0.0, cfg.kp_noise_px, p.shape) if cfg.kp_noise_px > 0 else p.copy()
        xy = np.clip(xy, 0.0, size)
        c = simulate_confidence(NUM_JOINTS, cfg.noise, rng)
        xy[c == 0] = 0.0
        skeleton.append(FrameSkeleton(np.column_stack([xy, c])))
    return Sample(frames.astype(np.float32), skeleton, (spec.body_level_id, spec.action_id), pix)


def split_counts(n: int) -> tuple:
    n_train = int(round(0.7 * n))
    n_val = int(round(0.15 * n))
    return n_train, n_val, n - n_train - n_val


def gen_dataset(out_dir, n_per_class: int, specs: Optional[Sequence[ActionSpec]] = None, seed: int = 0,
                noise: float = 0.1, cfg: Optional[GenConfig] = None, frame_format: str = "mdnvid",
                require_both_kinds: bool = False) -> Path:
    """Write videos, keypoint files, ``manifest.csv`` and ``meta.json`` under ``out_dir``."""
    specs = list(specs) if specs is not None else builtin_specs()
    if not specs:
        raise ValueError("no action specs given")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be positive, got {n_per_class}")
    kinds = {s.kind for s in specs}
    if require_both_kinds and kinds != {"position", "motion"}:
        raise ValueError("the ST/TS hypothesis test needs both position and motion classes")
    cfg = cfg or GenConfig()
    cfg = GenConfig(**{**asdict(cfg), "noise": noise})
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "keypoints").mkdir(parents=True, exist_ok=True)
    rows = []
    n_train, n_val, _ = split_counts(n_per_class)
    root = np.random.SeedSequence(seed)
    for spec, child in zip(specs, root.spawn(len(specs))):
        order = np.random.default_rng(child.spawn(1)[0]).permutation(n_per_class)
        split_of = {}
        for rank, i in enumerate(order):
            split_of[int(i)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
        for i, sub in enumerate(child.spawn(n_per_class)):
            sample = make_sample(spec, cfg, np.random.default_rng(sub))
            sid = f"a{spec.action_id:02d}_{i:04d}"
            if frame_format == "png":
                _write_png_frames(out / "videos" / sid, sample.frames)
            else:
                (out / "videos" / f"{sid}.mdnvid").write_bytes(encode_video(sample.frames))
            (out / "keypoints" / f"{sid}.jsonl").write_bytes(dump_keypoints(sample.skeleton))
            rows.append((sid, split_of[i], spec.body_level_id, spec.action_id))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "split", "body_label", "action_label"])
    writer.writerows(rows)
    (out / "manifest.csv").write_text(buf.getvalue())
    meta = {
        "canvas": cfg.canvas, "n_frames": cfg.n_frames, "seed": seed, "noise": noise,
        "frame_format": frame_format, "generator": asdict(cfg),
        "actions": [{"id": s.action_id, "name": s.name, "body_level": s.body_level_id, "kind": s.kind}
                    for s in specs],
        "body_levels": sorted({s.body_level_id for s in specs}),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out


def _write_png_frames(path: Path, frames: np.ndarray) -> None:
    from PIL import Image

    path.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)
    for t, f in enumerate(arr):
        Image.fromarray(f).save(path / f"{t:04d}.png", optimize=False)
