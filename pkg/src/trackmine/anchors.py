"""Geometric subselection of detector anchor boxes from tracks,
free-space masks, and depth, plus the person+bicycle merging rule.

Outcomes per anchor: positive for a known class, negative, ignored, or
excluded because the anchor looks too far away for reliable tracking.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import MissingPositionsError, OutOfBoundsError
from .geometry import Box, Frame, Track, TrackCollection, box_iou, decode_rle, encode_rle

NO_DEPTH = 0.0

VARIANTS = ("full", "negatives1", "negatives2")


class Outcome(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORE = "ignore"
    EXCLUDED_FAR = "excluded_far"


@dataclass(frozen=True)
class AnchorConfig:
    pos_iou: float = 0.5
    neg_area_fraction: float = 0.9
    far_pixel_fraction: float = 0.5
    far_distance_m: float = 30.0
    unknown_ignore_iou: float = 0.3

    def __post_init__(self):
        for name in ("pos_iou", "neg_area_fraction", "far_pixel_fraction", "unknown_ignore_iou"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.far_distance_m <= 0:
            raise ValueError("far_distance_m must be positive")


@dataclass(frozen=True)
class SceneFrame:
    """All per-frame inputs the anchor decision needs.

    depth is meters per pixel with 0.0 marking missing measurements;
    free_space is a boolean mask of ground pixels and tall structures.
    """

    image_size: tuple[int, int]  # (height, width)
    anchors: tuple[Box, ...]
    track_boxes: tuple[tuple[Box, str], ...]  # (box, class label)
    free_space: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "track_boxes", tuple(self.track_boxes))
        h, w = self.image_size
        if self.free_space.shape != (h, w) or self.depth.shape != (h, w):
            raise ValueError("free_space and depth must match the image size")
        if np.any(self.depth < 0):
            raise ValueError("depths must be positive or the 0.0 sentinel")


@dataclass(frozen=True)
class AnchorDecision:
    anchor_index: int
    outcome: Outcome
    class_label: str | None = None  # set for POSITIVE only
    fired_rule: str = ""


def _pixel_slice(anchor: Box, image_size) -> tuple[slice, slice]:
    h, w = image_size
    x0, y0 = int(np.floor(anchor.x)), int(np.floor(anchor.y))
    x1, y1 = int(np.ceil(anchor.x + anchor.w)), int(np.ceil(anchor.y + anchor.h))
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise OutOfBoundsError(f"anchor {anchor} outside {w}x{h} image")
    return slice(y0, y1), slice(x0, x1)


def far_fraction(anchor: Box, depth: np.ndarray, far_distance: float) -> float:
    """Fraction of anchor pixels farther than the threshold; pixels
    without a depth measurement count as far."""
    ys, xs = _pixel_slice(anchor, depth.shape)
    patch = depth[ys, xs]
    far = (patch > far_distance) | (patch == NO_DEPTH)
    return float(far.mean())


def mask_containment(anchor: Box, free_space: np.ndarray) -> float:
    """Fraction of anchor pixels lying inside the free-space mask."""
    ys, xs = _pixel_slice(anchor, free_space.shape)
    return float(free_space[ys, xs].mean())


def classify_anchor(
    anchor: Box,
    frame: SceneFrame,
    cfg: AnchorConfig,
    variant: str = "full",
    anchor_index: int | None = None,
) -> AnchorDecision:
    """Rule cascade, first match wins: far exclusion, known-track
    positive, unknown-track ignore, free-space negative, ignore."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if anchor_index is not None:
        idx = anchor_index
    else:
        idx = frame.anchors.index(anchor) if anchor in frame.anchors else -1

    if far_fraction(anchor, frame.depth, cfg.far_distance_m) >= cfg.far_pixel_fraction:
        return AnchorDecision(idx, Outcome.EXCLUDED_FAR, fired_rule="far_exclusion")

    best_known = None
    best_key = None
    for tid, (box, label) in enumerate(frame.track_boxes):
        if label == "unknown":
            continue
        iou = box_iou(anchor, box)
        if iou > cfg.pos_iou:
            key = (iou, box.area, -tid)
            if best_key is None or key > best_key:
                best_known, best_key = label, key
    if best_known is not None:
        return AnchorDecision(
            idx, Outcome.POSITIVE, class_label=best_known, fired_rule="known_track_iou"
        )

    if variant == "full":
        for box, label in frame.track_boxes:
            if label == "unknown" and box_iou(anchor, box) > cfg.unknown_ignore_iou:
                return AnchorDecision(idx, Outcome.IGNORE, fired_rule="unknown_track")

    if variant == "negatives1":
        # free-space restriction disabled: anything not positive or far
        # becomes a negative, including the potential-objects region
        return AnchorDecision(idx, Outcome.NEGATIVE, fired_rule="negative_unrestricted")

    if mask_containment(anchor, frame.free_space) >= cfg.neg_area_fraction:
        return AnchorDecision(idx, Outcome.NEGATIVE, fired_rule="free_space")
    return AnchorDecision(idx, Outcome.IGNORE, fired_rule="default_ignore")


def select_anchors(
    frame: SceneFrame, cfg: AnchorConfig, variant: str = "full"
) -> tuple[list[AnchorDecision], dict[str, int]]:
    """One decision per anchor plus per-outcome summary counts."""
    decisions = []
    counts = {o.value: 0 for o in Outcome}
    for i, anchor in enumerate(frame.anchors):
        d = classify_anchor(anchor, frame, cfg, variant, anchor_index=i)
        decisions.append(d)
        counts[d.outcome.value] += 1
    return decisions, counts


# ---------------------------------------------------------------------------
# Cyclist merging


def _covisible_distances(a: Track, b: Track) -> list[float]:
    pos_b = {f.t: f.pos for f in b.frames}
    dists = []
    for f in a.frames:
        p = pos_b.get(f.t)
        if p is None or f.pos is None:
            continue
        dists.append(float(np.linalg.norm(np.subtract(f.pos, p))))
    return dists


def _union_box(a: Box, b: Box) -> Box:
    x0, y0 = min(a.x, b.x), min(a.y, b.y)
    x1 = max(a.x + a.w, b.x + b.w)
    y1 = max(a.y + a.h, b.y + b.h)
    return Box(x0, y0, x1 - x0, y1 - y0)


def _merge_frames(a: Track, b: Track) -> tuple[Frame, ...]:
    by_t: dict[int, Frame] = {f.t: f for f in a.frames}
    for f in b.frames:
        if f.t in by_t:
            g = by_t[f.t]
            mask = encode_rle(decode_rle(g.mask) | decode_rle(f.mask))
            pos = g.pos  # person footpoint kept; arbitrary but stable
            by_t[f.t] = Frame(t=f.t, box=_union_box(g.box, f.box), mask=mask, pos=pos)
        else:
            by_t[f.t] = f
    return tuple(by_t[t] for t in sorted(by_t))


def merge_cyclists(tracks: TrackCollection, max_dist_m: float = 1.0) -> TrackCollection:
    """Fuse person/bicycle track pairs riding together into cyclist tracks.

    A pair qualifies when the footpoint distance is below the threshold
    in a majority of co-visible frames; pairing is greedy by ascending
    mean distance and each track joins at most one merge.
    """
    persons = [t for t in tracks.tracks if t.class_label == "person"]
    bikes = [t for t in tracks.tracks if t.class_label == "bicycle"]
    if persons and bikes:
        for t in persons + bikes:
            if any(f.pos is None for f in t.frames):
                raise MissingPositionsError(f"track {t.id} lacks footpoint positions")

    candidates = []
    for p in persons:
        for b in bikes:
            dists = _covisible_distances(p, b)
            if not dists:
                continue
            close = sum(d < max_dist_m for d in dists)
            if close * 2 > len(dists):
                candidates.append((float(np.mean(dists)), p.id, b.id, p, b))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    merged_ids: set[int] = set()
    new_tracks: list[Track] = []
    next_id = max((t.id for t in tracks.tracks), default=-1) + 1
    for _, _, _, p, b in candidates:
        if p.id in merged_ids or b.id in merged_ids:
            continue
        merged_ids.update((p.id, b.id))
        new_tracks.append(
            Track(
                id=next_id,
                member_tracklet_ids=p.member_tracklet_ids + b.member_tracklet_ids,
                frames=_merge_frames(p, b),
                class_label="cyclist",
            )
        )
        next_id += 1

    kept = [t for t in tracks.tracks if t.id not in merged_ids]
    return TrackCollection(tracks=tuple(kept + new_tracks), provenance=tracks.provenance)
