"""BODY-25 skeletons and keypoint-guided entity boxes."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

NUM_JOINTS = 25

BODY25_NAMES = (
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow", "LWrist",
    "MidHip", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "REye", "LEye",
    "REar", "LEar", "LBigToe", "LSmallToe", "LHeel", "RBigToe", "RSmallToe", "RHeel",
)

# limb topology used for rendering and for sanity checks
BODY25_LIMBS = (
    (1, 8), (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7), (8, 9), (9, 10), (10, 11),
    (8, 12), (12, 13), (13, 14), (1, 0), (0, 15), (15, 17), (0, 16), (16, 18),
    (14, 19), (19, 20), (14, 21), (11, 22), (22, 23), (11, 24),
)

# joint permutation for a horizontal mirror (left <-> right)
BODY25_FLIP = (0, 1, 5, 6, 7, 2, 3, 4, 8, 12, 13, 14, 9, 10, 11, 16, 15, 18, 17, 22, 23, 24, 19, 20, 21)

SOURCE_COMPUTED = "computed"
SOURCE_CARRIED = "carried-forward"
SOURCE_INVALID = "invalid"


class KeypointFormatError(ValueError):
    pass


class Keypoint(NamedTuple):
    x: float
    y: float
    c: float


@dataclass(frozen=True)
class FrameSkeleton:
    """25 keypoints as a (25, 3) array of (x, y, confidence)."""

    keypoints: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        if kp.shape != (NUM_JOINTS, 3):
            raise KeypointFormatError(f"expected {NUM_JOINTS} keypoints of (x, y, c), got shape {kp.shape}")
        if not np.isfinite(kp).all():
            raise KeypointFormatError("keypoints must be finite")
        if (kp[:, 2] < 0).any() or (kp[:, 2] > 1).any():
            raise KeypointFormatError("keypoint confidence must lie in [0, 1]")
        object.__setattr__(self, "keypoints", kp)

    @classmethod
    def empty(cls) -> "FrameSkeleton":
        return cls(np.zeros((NUM_JOINTS, 3)))

    def __getitem__(self, j: int) -> Keypoint:
        return Keypoint(*map(float, self.keypoints[j]))

    def __eq__(self, other) -> bool:
        return isinstance(other, FrameSkeleton) and np.array_equal(self.keypoints, other.keypoints)

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def conf(self) -> np.ndarray:
        return self.keypoints[:, 2]

    def flipped(self, width: float) -> "FrameSkeleton":
        """Mirror horizontally in an image of ``width`` pixels, swapping left/right joints."""
        kp = self.keypoints[list(BODY25_FLIP)].copy()
        kp[:, 0] = width - kp[:, 0]
        return FrameSkeleton(kp)


@dataclass(frozen=True)
class EntityDef:
    id: int
    name: str
    joints: tuple
    hierarchy_level: int


@dataclass(frozen=True)
class EntityBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    visible: bool
    confidence: float
    source: str

    @property
    def valid(self) -> bool:
        return self.source != SOURCE_INVALID

    def as_tuple(self) -> tuple:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def invalid(cls) -> "EntityBox":
        return cls(0.0, 0.0, 0.0, 0.0, False, 0.0, SOURCE_INVALID)


_ENTITY_TABLE = (
    ("head", (1, 17, 18), 0),
    ("face", (0, 15, 16), 0),
    ("left_hand", (5, 6, 7), 2),
    ("right_hand", (2, 3, 4), 2),
    ("torso", (1, 2, 5, 8), 1),
    ("lower_body", (9, 10, 11, 12, 13, 14, 19, 20, 21, 22, 23, 24), 2),
)

# entity-name permutation under a horizontal mirror
ENTITY_FLIP = {"left_hand": "right_hand", "right_hand": "left_hand"}


def default_entity_defs(dataset_kind: str = "ma52-like") -> List[EntityDef]:
    """Six body-part entities, or five (no lower body) for upper-body data."""
    if dataset_kind == "ma52-like":
        rows = _ENTITY_TABLE
    elif dataset_kind == "imigue-like":
        rows = [r for r in _ENTITY_TABLE if r[0] != "lower_body"]
    else:
        raise ValueError(f"unknown dataset kind {dataset_kind!r}; expected 'ma52-like' or 'imigue-like'")
    return [EntityDef(i, name, joints, level) for i, (name, joints, level) in enumerate(rows)]


def flip_permutation(defs: Sequence[EntityDef]) -> List[int]:
    """Index map so that ``defs[perm[i]]`` is the mirror partner of ``defs[i]``."""
    by_name = {d.name: i for i, d in enumerate(defs)}
    return [by_name.get(ENTITY_FLIP.get(d.name, d.name), i) for i, d in enumerate(defs)]


def visible_set(skel: FrameSkeleton, edef: EntityDef, theta: float = 0.3) -> List[int]:
    c = skel.conf
    return [j for j in edef.joints if c[j] > theta]


def entity_confidence(skel: FrameSkeleton, edef: EntityDef, theta: float = 0.3) -> float:
    vis = visible_set(skel, edef, theta)
    if len(vis) < 2:
        return 0.0
    return float(np.mean(skel.conf[vis]))


def compute_entity_box(skel: FrameSkeleton, edef: EntityDef, prev: Optional[EntityBox] = None,
                       theta: float = 0.3, pad_frac: float = 0.10,
                       image_size: Optional[tuple] = None) -> EntityBox:
    """Padded enclosing box of the visible joints, else the previous box carried forward.

    ``image_size`` is ``(width, height)``; when given the padded box is clamped to it.
    """
    vis = visible_set(skel, edef, theta)
    if len(vis) >= 2:
        pts = skel.xy[vis]
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        px = pad_frac * (x1 - x0)
        py = pad_frac * (y1 - y0)
        x0, x1, y0, y1 = x0 - px, x1 + px, y0 - py, y1 + py
        if image_size is not None:
            w, h = image_size
            x0, x1 = min(max(x0, 0.0), w), min(max(x1, 0.0), w)
            y0, y1 = min(max(y0, 0.0), h), min(max(y1, 0.0), h)
        conf = float(np.mean(skel.conf[vis]))
        return EntityBox(float(x0), float(y0), float(x1), float(y1), True, conf, SOURCE_COMPUTED)
    if prev is not None and prev.source != SOURCE_INVALID:
        return EntityBox(prev.x_min, prev.y_min, prev.x_max, prev.y_max, False, 0.0, SOURCE_CARRIED)
    return EntityBox.invalid()


def track_entity_boxes(skeletons: Sequence[FrameSkeleton], defs: Sequence[EntityDef], theta: float = 0.3,
                       pad_frac: float = 0.10, image_size: Optional[tuple] = None) -> List[List[EntityBox]]:
    """T x K boxes; the temporal fallback is a left fold over frames."""
    prev: List[Optional[EntityBox]] = [None] * len(defs)
    out = []
    for skel in skeletons:
        row = [compute_entity_box(skel, d, prev[i], theta, pad_frac, image_size) for i, d in enumerate(defs)]
        out.append(row)
        prev = row
    return out


def boxes_to_arrays(track: Sequence[Sequence[EntityBox]]) -> tuple:
    """(boxes T x K x 4, valid mask T x K, confidence T x K) as numpy arrays."""
    t, k = len(track), len(track[0]) if track else 0
    boxes = np.zeros((t, k, 4), dtype=np.float64)
    mask = np.zeros((t, k), dtype=bool)
    conf = np.zeros((t, k), dtype=np.float64)
    for ti, row in enumerate(track):
        for ki, b in enumerate(row):
            if b.valid:
                boxes[ti, ki] = b.as_tuple()
                mask[ti, ki] = True
                conf[ti, ki] = b.confidence
    return boxes, mask, conf


# ----------------------------------------------------------------------------
# keypoint files
# ----------------------------------------------------------------------------

def _frame_from_obj(obj, index: int) -> FrameSkeleton:
    if not isinstance(obj, dict) or "people" not in obj or not isinstance(obj["people"], list):
        raise KeypointFormatError(f"frame {index}: expected an object with a 'people' array")
    best, best_score = None, -1.0
    for p, person in enumerate(obj["people"]):
        if not isinstance(person, dict) or "pose_keypoints_2d" not in person:
            raise KeypointFormatError(f"frame {index}: person {p} lacks 'pose_keypoints_2d'")
        flat = person["pose_keypoints_2d"]
        if not isinstance(flat, list) or len(flat) != NUM_JOINTS * 3:
            n = len(flat) if isinstance(flat, list) else "non-list"
            raise KeypointFormatError(f"frame {index}: expected {NUM_JOINTS * 3} numbers, got {n}")
        try:
            kp = np.asarray(flat, dtype=np.float64).reshape(NUM_JOINTS, 3)
        except (TypeError, ValueError):
            raise KeypointFormatError(f"frame {index}: non-numeric keypoint values") from None
        score = float(kp[:, 2].sum())
        if score > best_score:
            best, best_score = kp, score
    if best is None:
        return FrameSkeleton.empty()
    try:
        return FrameSkeleton(best)
    except KeypointFormatError as exc:
        raise KeypointFormatError(f"frame {index}: {exc}") from None


def parse_keypoint_file(data: Union[bytes, str]) -> List[FrameSkeleton]:
    """Parse one OpenPose frame object or JSON lines (one frame object per line)."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    stripped = text.strip()
    if not stripped:
        raise KeypointFormatError("frame 0: empty keypoint file")
    try:
        return [_frame_from_obj(json.loads(stripped), 0)]
    except json.JSONDecodeError:
        pass
    frames = []
    for i, line in enumerate(l for l in stripped.splitlines() if l.strip()):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise KeypointFormatError(f"frame {i}: invalid JSON ({exc.msg})") from None
        frames.append(_frame_from_obj(obj, i))
    return frames


def load_keypoints(path) -> List[FrameSkeleton]:
    """Read a JSON-lines file or a directory of per-frame JSON files (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".json")
        out = []
        for i, f in enumerate(files):
            frames = parse_keypoint_file(f.read_bytes())
            if len(frames) != 1:
                raise KeypointFormatError(f"frame {i}: {f.name} holds {len(frames)} frames")
            out.append(frames[0])
        return out
    return parse_keypoint_file(path.read_bytes())


def dump_keypoints(skeletons: Iterable[FrameSkeleton]) -> bytes:
    """JSON lines, one single-person frame object per line."""
    lines = []
    for skel in skeletons:
        flat = [float(v) for v in skel.keypoints.reshape(-1)]
        lines.append(json.dumps({"people": [{"pose_keypoints_2d": flat}]}, separators=(",", ":")))
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_keypoint_dir(path, skeletons: Sequence[FrameSkeleton]) -> None:
    os.makedirs(path, exist_ok=True)
    for i, skel in enumerate(skeletons):
        body = dump_keypoints([skel]).strip()
        Path(path, f"{i:06d}_keypoints.json").write_bytes(body)
