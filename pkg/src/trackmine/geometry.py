"""Domain types and geometry primitives: boxes, RLE masks, tracklets, tracks.

Masks are stored run-length encoded in column-major scan order, with the
first count giving the number of leading zeros (possibly 0). Boxes are
continuous-coordinate, half-open [x, x+w) x [y, y+h).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SizeMismatchError


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, top-left corner plus positive extent."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box extent must be positive")

    @property
    def area(self) -> float:
        return self.w * self.h


def box_iou(a: Box, b: Box) -> float:
    """Standard axis-aligned IoU over half-open boxes."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # clamp: rounding can push the ratio marginally past 1
    return min(1.0, inter / (a.area + b.area - inter))


@dataclass(frozen=True)
class MaskRLE:
    """Binary mask, run-length encoded column-major starting with a zero run."""

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(self.size))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        h, w = self.size
        if any(c < 0 for c in self.counts):
            raise ValueError("run lengths must be non-negative")
        if sum(self.counts) != h * w:
            raise SizeMismatchError(
                f"counts sum to {sum(self.counts)}, expected {h * w}"
            )

    @property
    def area(self) -> int:
        """Number of foreground pixels (odd-indexed runs)."""
        return sum(self.counts[1::2])


def decode_rle(m: MaskRLE) -> np.ndarray:
    """Decode to a boolean (height, width) array."""
    h, w = m.size
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for c in m.counts:
        if val:
            flat[pos : pos + c] = True
        pos += c
        val = not val
    return flat.reshape((h, w), order="F")


def encode_rle(mask: np.ndarray) -> MaskRLE:
    """Encode a boolean 2-D array; inverse of :func:`decode_rle`."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.reshape(-1, order="F")
    if flat.size == 0:
        return MaskRLE(size=(h, w), counts=(0,))
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return MaskRLE(size=(h, w), counts=tuple(counts))


def mask_iou(a: MaskRLE, b: MaskRLE) -> float:
    """Pixel IoU of two same-size masks; 0 when both are empty."""
    if a.size != b.size:
        raise SizeMismatchError(f"mask sizes differ: {a.size} vs {b.size}")
    # Runs of both masks are walked jointly; no decoding needed.
    inter = _rle_intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def _rle_intersection_area(a: MaskRLE, b: MaskRLE) -> int:
    bounds_a = np.cumsum(a.counts)
    bounds_b = np.cumsum(b.counts)
    inter = 0
    ia = ib = 0
    pos = 0
    va = vb = False
    total = a.size[0] * a.size[1]
    while pos < total:
        end_a = bounds_a[ia] if ia < len(bounds_a) else total
        end_b = bounds_b[ib] if ib < len(bounds_b) else total
        end = min(end_a, end_b)
        if va and vb:
            inter += end - pos
        if end == end_a:
            ia += 1
            va = not va
        if end == end_b:
            ib += 1
            vb = not vb
        pos = end
    return inter


@dataclass(frozen=True)
class Frame:
    """One time step of a tracklet or track."""

    t: int
    box: Box
    mask: MaskRLE
    pos: tuple[float, ...] | None = None  # ground-plane footpoint, meters


def _check_frames(frames: tuple[Frame, ...]) -> None:
    if not frames:
        raise ValueError("frame list must be non-empty")
    ts = [f.t for f in frames]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("frame indices must be strictly increasing")


@dataclass(frozen=True)
class Tracklet:
    """Short per-frame hypothesis of one object, as produced upstream."""

    id: int
    frames: tuple[Frame, ...]
    class_label: str = "unknown"

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        _check_frames(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def frame_at(self, t: int) -> Frame | None:
        for f in self.frames:
            if f.t == t:
                return f
        return None

    @property
    def first_t(self) -> int:
        return self.frames[0].t

    @property
    def last_t(self) -> int:
        return self.frames[-1].t


@dataclass(frozen=True)
class Track:
    """A chain of merged tracklets covering one object's visible lifespan."""

    id: int
    member_tracklet_ids: tuple[int, ...]
    frames: tuple[Frame, ...]
    class_label: str = "unknown"

    def __post_init__(self):
        object.__setattr__(
            self, "member_tracklet_ids", tuple(self.member_tracklet_ids)
        )
        object.__setattr__(self, "frames", tuple(self.frames))
        _check_frames(self.frames)


@dataclass(frozen=True)
class TrackCollection:
    tracks: tuple[Track, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        ids = [t.id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ValueError("track ids must be unique")


# ---------------------------------------------------------------------------
# JSON Lines interchange


def _frame_to_json(f: Frame) -> dict:
    d = {
        "t": f.t,
        "box": [f.box.x, f.box.y, f.box.w, f.box.h],
        "mask": {"size": list(f.mask.size), "counts": list(f.mask.counts)},
    }
    if f.pos is not None:
        d["pos"] = list(f.pos)
    return d


def _frame_from_json(d: dict) -> Frame:
    x, y, w, h = d["box"]
    mask = MaskRLE(size=tuple(d["mask"]["size"]), counts=tuple(d["mask"]["counts"]))
    pos = tuple(d["pos"]) if "pos" in d else None
    return Frame(t=int(d["t"]), box=Box(x, y, w, h), mask=mask, pos=pos)


def tracklet_to_json(tr: Tracklet) -> dict:
    return {
        "id": tr.id,
        "class": tr.class_label,
        "frames": [_frame_to_json(f) for f in tr.frames],
    }


def tracklet_from_json(d: dict) -> Tracklet:
    return Tracklet(
        id=int(d["id"]),
        frames=tuple(_frame_from_json(f) for f in d["frames"]),
        class_label=d.get("class", "unknown"),
    )


def track_to_json(tr: Track) -> dict:
    return {
        "id": tr.id,
        "class": tr.class_label,
        "members": list(tr.member_tracklet_ids),
        "frames": [_frame_to_json(f) for f in tr.frames],
    }


def track_from_json(d: dict) -> Track:
    return Track(
        id=int(d["id"]),
        member_tracklet_ids=tuple(d.get("members", [])),
        frames=tuple(_frame_from_json(f) for f in d["frames"]),
        class_label=d.get("class", "unknown"),
    )


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def load_tracklets(path) -> list[Tracklet]:
    return [tracklet_from_json(d) for d in read_jsonl(path)]


def save_tracklets(path, tracklets) -> None:
    write_jsonl(path, (tracklet_to_json(t) for t in tracklets))


def load_tracks(path) -> list[Track]:
    return [track_from_json(d) for d in read_jsonl(path)]


def save_tracks(path, tracks) -> None:
    write_jsonl(path, (track_to_json(t) for t in tracks))
