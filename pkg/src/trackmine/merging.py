"""Progressive merging of per-frame selected tracklets into tracks.

The merge criterion is the overlap ratio between two tracklets: the number
of co-visible frames whose masks match above an IoU threshold, divided by
the length of the shorter tracklet.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import DanglingIdError
from .geometry import Frame, Track, TrackCollection, Tracklet, mask_iou


@dataclass(frozen=True)
class MergeConfig:
    gamma: float = 0.5  # per-frame mask IoU match threshold
    min_overlap: float = 0.5  # minimum overlap ratio to continue a track

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.min_overlap <= 1.0:
            raise ValueError("min_overlap must be in (0, 1]")


@dataclass(frozen=True)
class SelectionLog:
    """Per-frame tracklet ids picked by the upstream model selection."""

    frames: tuple[tuple[int, tuple[int, ...]], ...]

    @classmethod
    def from_records(cls, records) -> "SelectionLog":
        entries = sorted(
            (int(r["t"]), tuple(int(i) for i in r["selected"])) for r in records
        )
        return cls(frames=tuple(entries))

    def to_records(self):
        return [{"t": t, "selected": list(ids)} for t, ids in self.frames]


def matching_frames(h_i: Tracklet, h_j: Tracklet, gamma: float) -> int:
    """Count frames where both tracklets exist and mask IoU exceeds gamma."""
    frames_j = {f.t: f for f in h_j.frames}
    count = 0
    for f in h_i.frames:
        g = frames_j.get(f.t)
        if g is not None and mask_iou(f.mask, g.mask) > gamma:
            count += 1
    return count


def overlap_ratio(h_i: Tracklet, h_j: Tracklet, gamma: float) -> float:
    """Fraction of the shorter tracklet covered by matching frames."""
    return matching_frames(h_i, h_j, gamma) / min(len(h_i), len(h_j))


def _majority_label(labels) -> str:
    counts = Counter(labels)
    top = max(counts.values())
    winners = sorted(k for k, v in counts.items() if v == top)
    if "unknown" in winners:
        return "unknown"
    return winners[0]


@dataclass
class _OpenTrack:
    members: list[int] = field(default_factory=list)
    current: int = -1


def merge_collection(
    tracklets: list[Tracklet],
    selection: SelectionLog,
    cfg: MergeConfig,
    provenance: dict | None = None,
) -> TrackCollection:
    """Frame-ordered sweep assembling selected tracklets into tracks.

    At each frame a track whose current tracklet is re-selected continues
    unchanged; a track whose tracklet was dropped is continued by the
    unused selected tracklet with maximal overlap ratio above the
    threshold (ties: longer tracklet, then smaller id), else terminated
    permanently. Selected tracklets continuing no track start new tracks.
    """
    by_id = {tr.id: tr for tr in tracklets}
    for t, ids in selection.frames:
        for tid in ids:
            if tid not in by_id:
                raise DanglingIdError(f"selection at frame {t} references id {tid}")

    open_tracks: list[_OpenTrack] = []
    finished: list[_OpenTrack] = []
    used: set[int] = set()

    for t, ids in selection.frames:
        selected = set(ids)
        available = [tid for tid in sorted(selected) if tid not in used]
        survivors: list[_OpenTrack] = []
        dropped: list[_OpenTrack] = []
        for track in open_tracks:
            (survivors if track.current in selected else dropped).append(track)

        for track in dropped:
            cur = by_id[track.current]
            best = None
            best_key = None
            for tid in available:
                cand = by_id[tid]
                lam = overlap_ratio(cur, cand, cfg.gamma)
                if lam < cfg.min_overlap:
                    continue
                key = (lam, len(cand), -tid)
                if best_key is None or key > best_key:
                    best, best_key = tid, key
            if best is None:
                finished.append(track)
            else:
                track.members.append(best)
                track.current = best
                used.add(best)
                available.remove(best)
                survivors.append(track)

        for tid in available:
            used.add(tid)
            survivors.append(_OpenTrack(members=[tid], current=tid))

        open_tracks = survivors

    finished.extend(open_tracks)
    # Track ids follow the order in which the first member was selected.
    finished.sort(key=lambda tr: _first_selection_order(tr, selection))

    tracks = []
    for i, open_track in enumerate(finished):
        frames: dict[int, Frame] = {}
        for tid in open_track.members:
            for f in by_id[tid].frames:
                frames.setdefault(f.t, f)
        tracks.append(
            Track(
                id=i,
                member_tracklet_ids=tuple(open_track.members),
                frames=tuple(frames[t] for t in sorted(frames)),
                class_label=_majority_label(
                    by_id[tid].class_label for tid in open_track.members
                ),
            )
        )
    return TrackCollection(tracks=tuple(tracks), provenance=provenance or {})


def _first_selection_order(track: _OpenTrack, selection: SelectionLog):
    first = track.members[0]
    for order, (t, ids) in enumerate(selection.frames):
        if first in ids:
            return (order, first)
    return (len(selection.frames), first)
