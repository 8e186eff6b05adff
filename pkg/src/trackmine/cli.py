"""Command-line front-end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .anchors import AnchorConfig, VARIANTS, select_anchors
from .embedding import (
    EmbeddingModel,
    EmbeddingRecord,
    TrainConfig,
    l2_normalize,
    train_embedding,
)
from .errors import TrackmineError
from .featfiles import read_embeddings, write_embeddings
from .geometry import load_tracks
from .pipeline import (
    atomic_write_text,
    mining_stats_from_counts,
    mining_stats_from_files,
    parse_config,
    resolve_seed,
    run_pipeline,
    stage_cluster,
    stage_eval,
    stage_merge,
    stage_represent,
)
from .scenefiles import load_scene
from .synth import SCENARIOS, SynthSpec, generate


def _parse_fractions(text: str) -> list[float]:
    return [float(f) for f in text.split(",") if f != ""]


def _parse_params(pairs: list[str]) -> dict:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise TrackmineError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackmine", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge selected tracklets into tracks")
    p.add_argument("--input", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--min-overlap", type=float, default=0.5)
    p.add_argument("--output", required=True)

    p = sub.add_parser("embed-train", help="train the triplet embedding map")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True, help="CSV of id,label")
    p.add_argument("--output", required=True, help="model .npz path")
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--lr-decayed", type=float, default=1e-6)
    p.add_argument("--decay-after", type=int, default=1_500_000)
    p.add_argument("--total-samples", type=int, default=5_000_000)
    p.add_argument("--classes-per-batch", type=int, default=16)
    p.add_argument("--per-class", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("embed-apply", help="map features through a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--l2-normalize", action="store_true")

    p = sub.add_parser("represent", help="pick per-track representative embeddings")
    p.add_argument("--tracks", required=True)
    p.add_argument("--crop-embeddings", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("cluster", help="density-based clustering of embeddings")
    p.add_argument("--input", required=True)
    p.add_argument("--min-size", type=int, default=14)
    p.add_argument("--min-samples", type=int, default=None)
    p.add_argument("--output", required=True)

    p = sub.add_parser("eval", help="AMI / homogeneity / completeness sweep")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--fractions", default="0")
    p.add_argument("--normalizer", default="arithmetic")
    p.add_argument("--output", required=True)

    p = sub.add_parser("anchors", help="classify detector anchors in a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--pos-iou", type=float, default=0.5)
    p.add_argument("--neg-area", type=float, default=0.9)
    p.add_argument("--far-fraction", type=float, default=0.5)
    p.add_argument("--far", type=float, default=30.0)
    p.add_argument("--unknown-iou", type=float, default=0.3)
    p.add_argument("--output", required=True)

    p = sub.add_parser("stats", help="mining statistics report")
    p.add_argument("--counts", help="JSON file of precomputed counts")
    p.add_argument("--tracklets")
    p.add_argument("--selection")
    p.add_argument("--tracks")
    p.add_argument("--proposals-per-frame", type=int, default=100)
    p.add_argument("--output", help="optional CSV output path")

    p = sub.add_parser("synth", help="deterministic synthetic fixtures")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", default=[], help="key=value, repeatable")

    p = sub.add_parser("pipeline", help="end-to-end run from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], dest="overrides")

    return parser


def _cmd_merge(args):
    stage_merge(
        args.input, args.selection, args.output, gamma=args.gamma, min_overlap=args.min_overlap
    )


def _read_labels_csv(path):
    from .pipeline import read_truth_csv

    return read_truth_csv(path)


def _cmd_embed_train(args):
    records = read_embeddings(args.features)
    labels_by_id = _read_labels_csv(args.labels)
    feats, labels = [], []
    for rec in records:
        if rec.key not in labels_by_id:
            raise TrackmineError(f"feature id {rec.key!r} has no label")
        feats.append(rec.vector)
        labels.append(labels_by_id[rec.key])
    cfg = TrainConfig(
        lr_initial=args.lr,
        lr_decayed=args.lr_decayed,
        decay_after_samples=args.decay_after,
        total_samples=args.total_samples,
        num_classes_per_batch=args.classes_per_batch,
        per_class=args.per_class,
    )
    model = train_embedding(
        np.stack(feats),
        np.array(labels),
        cfg,
        seed=resolve_seed({}, args.seed),
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
    )
    model.save(args.output)


def _cmd_embed_apply(args):
    model = EmbeddingModel.load(args.model)
    records = read_embeddings(args.features)
    out = []
    for rec in records:
        vec = model.forward(rec.vector)
        if args.l2_normalize:
            vec = l2_normalize(vec)
        out.append(EmbeddingRecord(key=rec.key, vector=vec))
    write_embeddings(args.output, out)


def _cmd_anchors(args):
    tracks = load_tracks(args.tracks)
    frame = load_scene(args.scene, tracks)
    cfg = AnchorConfig(
        pos_iou=args.pos_iou,
        neg_area_fraction=args.neg_area,
        far_pixel_fraction=args.far_fraction,
        far_distance_m=args.far,
        unknown_ignore_iou=args.unknown_iou,
    )
    decisions, counts = select_anchors(frame, cfg, variant=args.variant)
    lines = []
    for d in decisions:
        rec = {
            "anchor": d.anchor_index,
            "outcome": d.outcome.value,
            "rule": d.fired_rule,
        }
        if d.class_label is not None:
            rec["class"] = d.class_label
        lines.append(json.dumps(rec, sort_keys=True))
    atomic_write_text(args.output, "".join(line + "\n" for line in lines))
    print(json.dumps(counts, sort_keys=True))


def _cmd_stats(args):
    if args.counts:
        with open(args.counts) as fh:
            stats = mining_stats_from_counts(json.load(fh))
    elif args.tracklets and args.selection and args.tracks:
        stats = mining_stats_from_files(
            args.tracklets, args.selection, args.tracks, args.proposals_per_frame
        )
    else:
        raise SystemExit(2)
    sys.stdout.write(stats.report_text())
    if args.output:
        atomic_write_text(args.output, stats.report_csv())


def _cmd_synth(args):
    spec = SynthSpec(
        scenario=args.scenario,
        seed=resolve_seed({}, args.seed),
        params=_parse_params(args.param),
    )
    info = generate(spec, args.out)
    print(json.dumps(info, sort_keys=True))


def _cmd_pipeline(args):
    cfg = parse_config(args.config)
    for pair in args.overrides:
        if "=" not in pair:
            raise TrackmineError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        cfg[key.strip()] = value.strip()
    report = run_pipeline(cfg, args.out)
    print(json.dumps(report, sort_keys=True))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "merge":
            _cmd_merge(args)
        elif args.command == "embed-train":
            _cmd_embed_train(args)
        elif args.command == "embed-apply":
            _cmd_embed_apply(args)
        elif args.command == "represent":
            stage_represent(args.tracks, args.crop_embeddings, args.output)
        elif args.command == "cluster":
            stage_cluster(
                args.input, args.output, min_size=args.min_size, min_samples=args.min_samples
            )
        elif args.command == "eval":
            stage_eval(
                args.pred,
                args.truth,
                args.output,
                fractions=_parse_fractions(args.fractions),
                normalizer=args.normalizer,
            )
        elif args.command == "anchors":
            _cmd_anchors(args)
        elif args.command == "stats":
            _cmd_stats(args)
        elif args.command == "synth":
            _cmd_synth(args)
        elif args.command == "pipeline":
            _cmd_pipeline(args)
        else:  # unreachable: argparse enforces the choices
            return 2
    except (TrackmineError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
