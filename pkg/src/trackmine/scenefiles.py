"""On-disk scene descriptor for anchor selection.

scene.json references a free-space mask (same RLE layout as the track
files), a raw 16-bit little-endian depth map in millimeters (0 marks a
missing measurement), and a CSV of anchor boxes; it also names the frame
index at which track boxes apply.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .anchors import SceneFrame
from .geometry import Box, MaskRLE, Track, decode_rle, encode_rle


def write_depth(path, depth_m: np.ndarray) -> None:
    mm = np.round(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    np.clip(mm, 0, 65535, out=mm)
    mm.astype("<u2").tofile(path)


def read_depth(path, shape) -> np.ndarray:
    mm = np.fromfile(path, dtype="<u2").reshape(shape)
    return mm.astype(np.float64) / 1000.0


def write_anchors_csv(path, anchors: list[Box]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "w", "h"])
        for a in anchors:
            writer.writerow([a.x, a.y, a.w, a.h])


def read_anchors_csv(path) -> list[Box]:
    anchors = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header and header[0] != "x":  # header-free file
            anchors.append(Box(*(float(v) for v in header)))
        for row in reader:
            if row:
                anchors.append(Box(*(float(v) for v in row)))
    return anchors


def write_scene(
    scene_path,
    image_size: tuple[int, int],
    free_space: np.ndarray,
    depth_m: np.ndarray,
    anchors: list[Box],
    frame_t: int,
) -> None:
    scene_path = Path(scene_path)
    base = scene_path.parent
    stem = scene_path.stem
    depth_file = f"{stem}_depth.bin"
    anchors_file = f"{stem}_anchors.csv"
    write_depth(base / depth_file, depth_m)
    write_anchors_csv(base / anchors_file, anchors)
    rle = encode_rle(free_space)
    descriptor = {
        "image_size": list(image_size),
        "free_space": {"size": list(rle.size), "counts": list(rle.counts)},
        "depth": depth_file,
        "anchors": anchors_file,
        "t": frame_t,
    }
    with open(scene_path, "w") as fh:
        json.dump(descriptor, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_scene(scene_path, tracks: list[Track] | None = None) -> SceneFrame:
    scene_path = Path(scene_path)
    with open(scene_path) as fh:
        d = json.load(fh)
    h, w = d["image_size"]
    rle = MaskRLE(size=tuple(d["free_space"]["size"]), counts=tuple(d["free_space"]["counts"]))
    free_space = decode_rle(rle)
    depth = read_depth(scene_path.parent / d["depth"], (h, w))
    anchors = read_anchors_csv(scene_path.parent / d["anchors"])
    t = int(d["t"])
    track_boxes = []
    for tr in tracks or []:
        for f in tr.frames:
            if f.t == t:
                track_boxes.append((f.box, tr.class_label))
                break
    return SceneFrame(
        image_size=(h, w),
        anchors=tuple(anchors),
        track_boxes=tuple(track_boxes),
        free_space=free_space,
        depth=depth,
    )
