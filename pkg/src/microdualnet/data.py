"""Dataset directories: manifest, clips, keypoints and batched model inputs."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .model import Batch
from .pose import boxes_to_arrays, default_entity_defs, load_keypoints, track_entity_boxes
from .synth import load_frames

MANIFEST_COLUMNS = ["sample_id", "split", "body_label", "action_label"]


class DatasetError(ValueError):
    pass


@dataclass
class ManifestRow:
    sample_id: str
    split: str
    body_label: int
    action_label: int


def read_manifest(root) -> List[ManifestRow]:
    path = Path(root) / "manifest.csv"
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_COLUMNS:
            raise DatasetError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != 4:
                raise DatasetError(f"{path}:{line_no}: expected 4 fields, got {len(rec)}")
            try:
                rows.append(ManifestRow(rec[0], rec[1], int(rec[2]), int(rec[3])))
            except ValueError as e:
                raise DatasetError(f"{path}:{line_no}: {e}") from e
    return rows


def read_meta(root) -> dict:
    path = Path(root) / "meta.json"
    if not path.is_file():
        raise DatasetError(f"dataset metadata not found: {path}")
    return json.loads(path.read_text())


def action_to_body(meta: dict) -> List[int]:
    actions = sorted(meta["actions"], key=lambda a: a["id"])
    return [a["body_level"] for a in actions]


def sample_indices(length: int, frames: int, stride: int, start: Optional[int] = None) -> np.ndarray:
    """Frame indices of a clip window; ``start=None`` centres it. Short clips repeat their last frame."""
    span = (frames - 1) * stride + 1
    if start is None:
        start = max(0, (length - span) // 2)
    return np.minimum(start + stride * np.arange(frames), length - 1)


class ClipDataset:
    """Samples of one split held in memory with their entity tracks.

    ``split`` may be a comma-separated list of split names; ``"*"`` selects every row.

    Tracks for the mirrored clip are precomputed so that flip augmentation
    only needs array indexing at batch time.
    """

    def __init__(self, root, split: str, entity_set: str = "ma52-like", frames: int = 8, frame_stride: int = 1):
        self.root = Path(root)
        self.meta = read_meta(self.root)
        wanted = {s.strip() for s in split.split(",")}
        self.rows = [r for r in read_manifest(self.root) if "*" in wanted or r.split in wanted]
        self.split = split
        self.frames, self.frame_stride = frames, frame_stride
        self.defs = default_entity_defs(entity_set)
        self.num_classes = len(self.meta["actions"])
        self.action_to_body = action_to_body(self.meta)
        self.clips: List[np.ndarray] = []
        self.tracks: List[tuple] = []
        self.flipped_tracks: List[tuple] = []
        fmt = self.meta.get("frame_format", "mdnvid")
        for r in self.rows:
            vpath = self.root / "videos" / (r.sample_id if fmt == "png" else f"{r.sample_id}.mdnvid")
            kpath = self.root / "keypoints" / f"{r.sample_id}.jsonl"
            for p in (vpath, kpath):
                if not p.exists():
                    raise DatasetError(f"missing file: {p}")
            clip = load_frames(vpath)
            skel = load_keypoints(kpath)
            if len(skel) != clip.shape[0]:
                raise DatasetError(f"{r.sample_id}: {clip.shape[0]} frames but {len(skel)} skeletons")
            h, w = clip.shape[1:3]
            self.clips.append(clip)
            self.tracks.append(boxes_to_arrays(track_entity_boxes(skel, self.defs, image_size=(w, h))))
            flipped = [s.flipped(w) for s in skel]
            self.flipped_tracks.append(boxes_to_arrays(track_entity_boxes(flipped, self.defs, image_size=(w, h))))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.action_label for r in self.rows], dtype=np.int64)

    def batch(self, idx: Sequence[int], rng: Optional[np.random.Generator] = None, flip: bool = False,
              jitter: bool = False) -> Batch:
        """Assemble a batch; with ``rng`` given, flip (p=0.5) and temporal jitter are drawn per clip."""
        frames, boxes, masks, confs = [], [], [], []
        for i in idx:
            clip = self.clips[i]
            length = clip.shape[0]
            span = (self.frames - 1) * self.frame_stride + 1
            start = None
            if rng is not None and jitter and length > span:
                start = int(rng.integers(0, length - span + 1))
            sel = sample_indices(length, self.frames, self.frame_stride, start)
            mirror = rng is not None and flip and rng.random() < 0.5
            b, m, c = self.flipped_tracks[i] if mirror else self.tracks[i]
            f = clip[sel]
            frames.append(f[:, :, ::-1] if mirror else f)
            boxes.append(b[sel])
            masks.append(m[sel])
            confs.append(c[sel])
        rows = [self.rows[i] for i in idx]
        return Batch(
            frames=np.ascontiguousarray(np.stack(frames)), boxes=np.stack(boxes), mask=np.stack(masks),
            conf=np.stack(confs), labels=np.array([r.action_label for r in rows], dtype=np.int64),
            body_labels=np.array([r.body_label for r in rows], dtype=np.int64), ids=[r.sample_id for r in rows],
        )
