"""Deterministic synthetic-data generators.

Each generator writes the same on-disk formats the pipeline consumes, so
end-to-end tests exercise parsing and logic together. Identical specs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anchors import Outcome
from .geometry import (
    Box,
    Frame,
    Tracklet,
    encode_rle,
    save_tracklets,
    write_jsonl,
)
from .scenefiles import write_scene

SCENARIOS = ("handoff-tracklets", "blobs-embeddings", "street-scene")


@dataclass(frozen=True)
class SynthSpec:
    scenario: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")


def generate(spec: SynthSpec, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if spec.scenario == "handoff-tracklets":
        return gen_tracklets(spec, out_dir)
    if spec.scenario == "blobs-embeddings":
        return gen_embeddings(spec, out_dir)
    return gen_scene(spec, out_dir)


# ---------------------------------------------------------------------------
# Handoff tracklets


def _rect_mask(size, x, y, w, h):
    m = np.zeros(size, dtype=bool)
    m[y : y + h, x : x + w] = True
    return encode_rle(m)


def gen_tracklets(spec: SynthSpec, out_dir: Path) -> dict:
    """Objects represented by 1-3 temporally overlapping tracklets with a
    controllable per-frame mask IoU at the handoff."""
    p = spec.params
    n_objects = int(p.get("objects", 5))
    per_object = int(p.get("tracklets_per_object", 2))
    handoff_iou = float(p.get("handoff_iou", 0.9))
    seg_len = int(p.get("segment_frames", 10))
    overlap = int(p.get("overlap_frames", 6))
    labels = p.get("labels", ["car", "person", "unknown"])

    obj_w, obj_h = 12, 8
    size = (8 + n_objects * (obj_h + 4), 40 + (per_object * seg_len + 4))
    # shift giving the requested rectangle IoU: iou = (w - s) / (w + s)
    shift = int(round(obj_w * (1.0 - handoff_iou) / (1.0 + handoff_iou)))

    tracklets = []
    selection: dict[int, list[int]] = {}
    truth = []
    tid = 0
    for obj in range(n_objects):
        y = 4 + obj * (obj_h + 4)
        label = labels[obj % len(labels)]
        for k in range(per_object):
            t0 = k * (seg_len - overlap)
            x0 = 4 + k * shift
            frames = []
            for dt in range(seg_len):
                t = t0 + dt
                x = x0 + t - t0  # constant 1 px/frame drift
                frames.append(
                    Frame(
                        t=t,
                        box=Box(float(x), float(y), float(obj_w), float(obj_h)),
                        mask=_rect_mask(size, x, y, obj_w, obj_h),
                    )
                )
            tracklets.append(Tracklet(id=tid, frames=tuple(frames), class_label=label))
            truth.append((tid, obj))
            # select this tracklet from the middle of the previous overlap on
            sel_start = t0 if k == 0 else t0 + overlap // 2
            sel_end = t0 + seg_len if k == per_object - 1 else t0 + seg_len - (overlap - overlap // 2)
            for t in range(sel_start, sel_end):
                selection.setdefault(t, []).append(tid)
            tid += 1

    save_tracklets(out_dir / "tracklets.jsonl", tracklets)
    write_jsonl(
        out_dir / "selection.jsonl",
        ({"t": t, "selected": ids} for t, ids in sorted(selection.items())),
    )
    with open(out_dir / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tracklet_id", "object_id"])
        writer.writerows(truth)
    return {
        "tracklets": str(out_dir / "tracklets.jsonl"),
        "selection": str(out_dir / "selection.jsonl"),
        "truth": str(out_dir / "truth.csv"),
        "objects": n_objects,
        "tracklet_count": tid,
    }


# ---------------------------------------------------------------------------
# Gaussian blob embeddings


def gen_embeddings(spec: SynthSpec, out_dir: Path) -> dict:
    """Class-structured Gaussian blobs with an optional uniform outlier
    fraction; means sit on scaled coordinate axes for a hard separation
    guarantee."""
    from .embedding import EmbeddingRecord
    from .featfiles import write_embeddings_bin

    p = spec.params
    n_classes = int(p.get("classes", 3))
    dim = int(p.get("dim", 8))
    per_class = int(p.get("per_class", 100))
    separation = float(p.get("separation", 10.0))
    outlier_fraction = float(p.get("outlier_fraction", 0.0))

    rng = np.random.default_rng(spec.seed)
    records = []
    rows = []
    idx = 0
    for c in range(n_classes):
        mean = np.zeros(dim)
        mean[c % dim] = separation * (1 + c // dim)
        for _ in range(per_class):
            vec = mean + rng.standard_normal(dim)
            records.append(EmbeddingRecord(key=f"p{idx:05d}", vector=vec))
            rows.append((f"p{idx:05d}", c))
            idx += 1
    n_outliers = int(round(outlier_fraction * len(records)))
    for _ in range(n_outliers):
        vec = rng.uniform(-2 * separation, 2 * separation, size=dim)
        records.append(EmbeddingRecord(key=f"p{idx:05d}", vector=vec))
        rows.append((f"p{idx:05d}", -1))
        idx += 1

    write_embeddings_bin(out_dir / "features.bin", records)
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        writer.writerows(rows)
    return {
        "features": str(out_dir / "features.bin"),
        "labels": str(out_dir / "labels.csv"),
        "classes": n_classes,
        "count": idx,
    }


# ---------------------------------------------------------------------------
# Street scene


def gen_scene(spec: SynthSpec, out_dir: Path) -> dict:
    """Scene with ground, a tall structure, a potential-objects band, a
    far wall, and one known plus one unknown object; anchors with pinned
    ground-truth decisions are listed in expected.json."""
    p = spec.params
    h, w = int(p.get("height", 120)), int(p.get("width", 160))
    far_depth = float(p.get("far_depth", 40.0))
    near_depth = float(p.get("near_depth", 10.0))

    ground_top = 2 * h // 3
    wall_right = w // 5
    far_bottom = h // 3

    free_space = np.zeros((h, w), dtype=bool)
    free_space[ground_top:, :] = True  # ground
    free_space[:, :wall_right] = True  # tall structure

    depth = np.full((h, w), near_depth + 2.0)
    depth[ground_top:, :] = near_depth
    depth[:, :wall_right] = near_depth + 5.0
    depth[:far_bottom, wall_right:] = far_depth  # far wall

    band_y = far_bottom + 8
    car_box = Box(float(wall_right + 10), float(band_y), 24.0, 16.0)
    unknown_box = Box(float(wall_right + 60), float(band_y), 20.0, 14.0)
    tracks = [(car_box, "car"), (unknown_box, "unknown")]

    anchors = []
    expected = []
    # anchors centred on the two objects
    anchors.append(car_box)
    expected.append((0, Outcome.POSITIVE.value))
    anchors.append(unknown_box)
    expected.append((1, Outcome.IGNORE.value))
    # far-wall anchor
    anchors.append(Box(float(w - 40), 4.0, 24.0, 16.0))
    expected.append((2, Outcome.EXCLUDED_FAR.value))
    # ground anchor, fully on free space
    anchors.append(Box(float(w // 2), float(ground_top + 6), 24.0, 12.0))
    expected.append((3, Outcome.NEGATIVE.value))
    # dense grid over the whole image for volume
    step = int(p.get("grid_step", 16))
    for y in range(0, h - 16, step):
        for x in range(0, w - 16, step):
            anchors.append(Box(float(x), float(y), 16.0, 16.0))

    write_scene(out_dir / "scene.json", (h, w), free_space, depth, anchors, frame_t=0)

    from .geometry import Track, save_tracks

    track_objs = [
        Track(
            id=i,
            member_tracklet_ids=(i,),
            frames=(
                Frame(
                    t=0,
                    box=box,
                    mask=_rect_mask(
                        (h, w), int(box.x), int(box.y), int(box.w), int(box.h)
                    ),
                ),
            ),
            class_label=label,
        )
        for i, (box, label) in enumerate(tracks)
    ]
    save_tracks(out_dir / "tracks.jsonl", track_objs)
    with open(out_dir / "expected.json", "w") as fh:
        json.dump({"decisions": expected}, fh, sort_keys=True)
        fh.write("\n")
    return {
        "scene": str(out_dir / "scene.json"),
        "tracks": str(out_dir / "tracks.jsonl"),
        "expected": str(out_dir / "expected.json"),
        "anchor_count": len(anchors),
    }
