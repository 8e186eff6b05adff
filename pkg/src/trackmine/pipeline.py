"""Run manifests, mining statistics, and the end-to-end pipeline driver."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .density import Hdbscan
from .embedding import EmbeddingRecord, representative_embedding
from .errors import InconsistentInputsError, TrackmineError
from .featfiles import read_embeddings, write_embeddings_bin
from .geometry import load_tracks, read_jsonl
from .merging import MergeConfig, SelectionLog, merge_collection
from .metrics import outlier_sweep


def atomic_write_text(path, text: str) -> None:
    """Write-then-rename so a failed stage leaves no partial output."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            sha.update(chunk)
    return sha.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    input_digests: dict
    tool_version: str
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass(frozen=True)
class MiningStats:
    frames: int
    proposals_per_frame: int
    all_tracklets: int
    selected_tracklets: int
    tracks_total: int

    def __post_init__(self):
        if min(self.frames, self.all_tracklets, self.selected_tracklets, self.tracks_total) < 0:
            raise InconsistentInputsError("counts must be non-negative")
        if not self.tracks_total <= self.selected_tracklets <= self.all_tracklets:
            raise InconsistentInputsError(
                "expected tracks <= selected tracklets <= all tracklets, got "
                f"{self.tracks_total} / {self.selected_tracklets} / {self.all_tracklets}"
            )

    @property
    def per_frame_proposals(self) -> int:
        return self.frames * self.proposals_per_frame

    @property
    def proposals_per_track(self) -> float | None:
        if self.tracks_total == 0:
            return None
        return self.per_frame_proposals / self.tracks_total

    @property
    def tracklets_per_track(self) -> float | None:
        if self.tracks_total == 0:
            return None
        return self.all_tracklets / self.tracks_total

    def report_text(self) -> str:
        def fmt(v):
            return "—" if v is None else f"{v:.1f}"

        lines = [
            f"frames                {self.frames}",
            f"per-frame proposals   {self.per_frame_proposals}",
            f"all tracklets         {self.all_tracklets}",
            f"selected tracklets    {self.selected_tracklets}",
            f"tracks (total)        {self.tracks_total}",
            f"proposals per track   {fmt(self.proposals_per_track)}",
            f"tracklets per track   {fmt(self.tracklets_per_track)}",
        ]
        return "\n".join(lines) + "\n"

    def report_csv(self) -> str:
        fields = [
            ("frames", self.frames),
            ("per_frame_proposals", self.per_frame_proposals),
            ("all_tracklets", self.all_tracklets),
            ("selected_tracklets", self.selected_tracklets),
            ("tracks_total", self.tracks_total),
            ("proposals_per_track", self.proposals_per_track),
            ("tracklets_per_track", self.tracklets_per_track),
        ]
        rows = ["metric,value"]
        for k, v in fields:
            rows.append(f"{k},{'' if v is None else v}")
        return "\n".join(rows) + "\n"


def mining_stats_from_counts(counts: dict) -> MiningStats:
    return MiningStats(
        frames=int(counts["frames"]),
        proposals_per_frame=int(counts.get("proposals_per_frame", 100)),
        all_tracklets=int(counts["all_tracklets"]),
        selected_tracklets=int(counts["selected_tracklets"]),
        tracks_total=int(counts["tracks_total"]),
    )


def mining_stats_from_files(
    tracklets_path, selection_path, tracks_path, proposals_per_frame: int = 100
) -> MiningStats:
    selection = read_jsonl(selection_path)
    selected_ids = set()
    for rec in selection:
        selected_ids.update(int(i) for i in rec["selected"])
    return MiningStats(
        frames=len(selection),
        proposals_per_frame=proposals_per_frame,
        all_tracklets=len(read_jsonl(tracklets_path)),
        selected_tracklets=len(selected_ids),
        tracks_total=len(read_jsonl(tracks_path)),
    )


# ---------------------------------------------------------------------------
# Config handling


def parse_config(path) -> dict:
    """Simple key = value text config; '#' starts a comment."""
    cfg = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TrackmineError(f"malformed config line: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        cfg[key] = value
    return cfg


def resolve_seed(cfg: dict, default: int = 0) -> int:
    env = os.environ.get("TRACKMINE_SEED")
    if env is not None:
        return int(env)
    return int(cfg.get("seed", default))


# ---------------------------------------------------------------------------
# Pipeline stages (shared by the CLI subcommands and `pipeline`)


def stage_merge(tracklets_path, selection_path, out_path, gamma=0.5, min_overlap=0.5):
    from .geometry import load_tracklets, track_to_json

    tracklets = load_tracklets(tracklets_path)
    selection = SelectionLog.from_records(read_jsonl(selection_path))
    collection = merge_collection(
        tracklets, selection, MergeConfig(gamma=gamma, min_overlap=min_overlap)
    )
    lines = [json.dumps(track_to_json(t), sort_keys=True) for t in collection.tracks]
    atomic_write_text(out_path, "".join(line + "\n" for line in lines))
    return collection


def stage_represent(tracks_path, crop_embeddings_path, out_path):
    """Pick each track's representative crop embedding.

    Crop keys follow '<track_id>/<frame>'; bare keys equal to the track id
    are accepted for single-crop tracks.
    """
    tracks = load_tracks(tracks_path)
    crops = read_embeddings(crop_embeddings_path)
    by_track: dict[str, list[EmbeddingRecord]] = {}
    for rec in crops:
        track_key = rec.key.split("/", 1)[0]
        by_track.setdefault(track_key, []).append(rec)
    records = []
    for tr in tracks:
        members = by_track.get(str(tr.id), [])
        rep = representative_embedding(members)
        records.append(EmbeddingRecord(key=str(tr.id), vector=rep.vector))
    tmp = str(out_path) + ".tmp"
    write_embeddings_bin(tmp, records)
    os.replace(tmp, out_path)
    return records


def stage_cluster(embeddings_path, out_path, min_size=14, min_samples=None):
    records = read_embeddings(embeddings_path)
    x = np.stack([r.vector for r in records])
    est = Hdbscan(min_size=min_size, min_samples=min_samples).fit(x)
    rows = [
        {
            "id": rec.key,
            "label": int(label),
            "prob": float(prob),
            "outlier": float(score),
        }
        for rec, label, prob, score in zip(
            records, est.labels_, est.probabilities_, est.outlier_scores_
        )
    ]
    lines = [json.dumps(r, sort_keys=True) for r in rows]
    atomic_write_text(out_path, "".join(line + "\n" for line in lines))
    return rows


def read_truth_csv(path) -> dict[str, str]:
    truth = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header and header[0] not in ("id",):
            truth[header[0]] = header[1]
        for row in reader:
            if row:
                truth[row[0]] = row[1]
    return truth


def stage_eval(
    assignment_path, truth_path, out_path, fractions=(0.0,), normalizer="arithmetic"
):
    assignment = read_jsonl(assignment_path)
    truth = read_truth_csv(truth_path)
    missing = [r["id"] for r in assignment if r["id"] not in truth]
    if missing:
        raise TrackmineError(f"{len(missing)} scored points lack a true label")
    labels_pred = [r["label"] for r in assignment]
    labels_true = [truth[r["id"]] for r in assignment]
    scores = [r["outlier"] for r in assignment]
    points = outlier_sweep(
        labels_pred, labels_true, fractions, outlier_scores=scores, normalizer=normalizer
    )
    lines = [f"# normalizer={normalizer}", "fraction,retained,ami,homogeneity,completeness"]
    for pt in points:
        lines.append(
            f"{pt.fraction},{pt.retained},{pt.ami:.10f},{pt.homogeneity:.10f},{pt.completeness:.10f}"
        )
    atomic_write_text(out_path, "\n".join(lines) + "\n")
    return points


def run_pipeline(cfg: dict, out_dir) -> dict:
    """merge -> represent -> cluster -> eval -> report; stages whose
    inputs are not configured are skipped. Deterministic given the seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = resolve_seed(cfg)

    input_keys = ("tracklets", "selection", "crop_embeddings", "embeddings", "truth")
    inputs = {k: cfg[k] for k in input_keys if k in cfg}
    for k, path in inputs.items():
        if not Path(path).exists():
            raise TrackmineError(f"input file for {k!r} not found: {path}")
    digests = {k: file_digest(path) for k, path in inputs.items()}

    produced = {}
    if "tracklets" in cfg and "selection" in cfg:
        tracks_path = out_dir / "tracks.jsonl"
        stage_merge(
            cfg["tracklets"],
            cfg["selection"],
            tracks_path,
            gamma=float(cfg.get("gamma", 0.5)),
            min_overlap=float(cfg.get("min_overlap", 0.5)),
        )
        produced["tracks"] = str(tracks_path)

    embeddings_path = cfg.get("embeddings")
    if "crop_embeddings" in cfg and "tracks" in produced:
        rep_path = out_dir / "track-embeddings.bin"
        stage_represent(produced["tracks"], cfg["crop_embeddings"], rep_path)
        produced["track_embeddings"] = str(rep_path)
        embeddings_path = str(rep_path)

    result = {}
    if embeddings_path:
        assignment_path = out_dir / "assignment.jsonl"
        stage_cluster(
            embeddings_path,
            assignment_path,
            min_size=int(cfg.get("min_size", 14)),
            min_samples=int(cfg["min_samples"]) if "min_samples" in cfg else None,
        )
        produced["assignment"] = str(assignment_path)

        if "truth" in cfg:
            curve_path = out_dir / "curve.csv"
            fractions = [
                float(f) for f in str(cfg.get("fractions", "0")).split(",") if f != ""
            ]
            points = stage_eval(
                produced["assignment"],
                cfg["truth"],
                curve_path,
                fractions=fractions,
                normalizer=cfg.get("normalizer", "arithmetic"),
            )
            produced["curve"] = str(curve_path)
            result["final_ami"] = points[0].ami

    manifest = RunManifest(
        command="pipeline",
        config=dict(sorted(cfg.items())),
        input_digests=digests,
        tool_version=__version__,
        seed=seed,
    )
    atomic_write_text(out_dir / "manifest.json", manifest.to_json())
    report = {
        "manifest_digest": manifest.digest,
        "outputs": produced,
        **result,
    }
    atomic_write_text(out_dir / "report.json", json.dumps(report, sort_keys=True, indent=1) + "\n")
    return report
