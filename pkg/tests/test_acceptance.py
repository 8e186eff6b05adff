"""Acceptance gate: one test per release criterion.

Each criterion appears as exactly one test, so `pytest -v` prints one
pass/fail line per criterion. Tolerances are stated inline.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from trackmine.anchors import (
    NO_DEPTH,
    AnchorConfig,
    Outcome,
    SceneFrame,
    classify_anchor,
    select_anchors,
)
from trackmine.cli import main
from trackmine.density import (
    HdbscanConfig,
    NOISE,
    build_mst,
    core_distances,
    hdbscan,
    mutual_reachability_matrix,
    single_linkage_tree,
)
from trackmine.embedding import (
    EmbeddingModel,
    TrainConfig,
    TripletBatch,
    loss_gradient,
    train_embedding,
    triplet_loss,
)
from trackmine.geometry import Box, box_iou
from trackmine.merging import MergeConfig, merge_collection, overlap_ratio
from trackmine.metrics import (
    ami,
    contingency,
    entropies,
    expected_mi,
    homogeneity_completeness,
    mutual_information,
    outlier_sweep,
)
from trackmine.pipeline import mining_stats_from_counts

import test_merging as tm
from test_density import naive_single_linkage_heights

FIXTURES = Path(__file__).parent / "fixtures"


def report(n, text):
    print(f"[criterion {n}] PASS: {text}")


def test_criterion_1_overlap_formula_and_merge_oracle():
    start = time.monotonic()
    # hand fixture: 3 of 4 shared frames above gamma, shorter length 4
    a = tm.iou_tracklet(0, [(0, 0), (1, 0), (2, 0), (3, 0), (4, 0)])
    b = tm.iou_tracklet(1, [(1, 0), (2, 1), (3, 2), (4, 4)])
    assert overlap_ratio(a, b, 0.5) == 0.75

    cfg = MergeConfig()
    checked = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        tracklets, sel = tm.random_instance(rng, int(rng.integers(1, 7)))
        if not sel.frames:
            continue
        got = merge_collection(tracklets, sel, cfg)
        got_chains = sorted(t.member_tracklet_ids for t in got.tracks)
        assert got_chains == tm.oracle_merge(tracklets, sel, cfg), f"seed {seed}"
        checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"runtime {elapsed:.1f}s exceeds 10s"
    assert checked >= 150
    report(1, f"0.75 fixture exact; {checked} oracle instances in {elapsed:.1f}s")


def test_criterion_2_triplet_loss_oracle_and_gradient():
    rng = np.random.default_rng(0)
    model = EmbeddingModel(6, 4, seed=1)

    # 200 random batches vs full-triplet enumeration, exact to 1e-12
    for _ in range(200):
        p, k = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        batch = TripletBatch(features=rng.normal(size=(p, k, 6)))
        emb = model.forward(batch.features).reshape(p * k, -1)
        d = lambda i, j: float(np.linalg.norm(emb[i] - emb[j]))
        want = 0.0
        for i in range(p):
            for a_idx in range(k):
                ai = i * k + a_idx
                hard_pos = max(d(ai, i * k + q) for q in range(k))
                hard_neg = min(
                    d(ai, j * k + n) for j in range(p) if j != i for n in range(k)
                )
                want += math.log1p(math.exp(-abs(hard_pos - hard_neg))) + max(
                    hard_pos - hard_neg, 0.0
                )
        assert abs(triplet_loss(model, batch) - want) <= 1e-12

    # gradient vs central finite differences: 20 batches x 50 coordinates
    for bi in range(20):
        grad_model = EmbeddingModel(5, 3, hidden_dim=(7 if bi % 2 else None), seed=bi)
        batch = TripletBatch(features=rng.normal(size=(4, 3, 5)))
        grads = loss_gradient(grad_model, batch)
        flat_g = np.concatenate([arr.ravel() for layer in grads for arr in layer])
        f0 = grad_model.flat_params()
        probe = grad_model.copy()
        eps = 1e-6
        for ci in rng.choice(len(f0), size=min(50, len(f0)), replace=False):
            fp = f0.copy()
            fp[ci] += eps
            probe.set_flat_params(fp)
            up = triplet_loss(probe, batch)
            fp[ci] -= 2 * eps
            probe.set_flat_params(fp)
            down = triplet_loss(probe, batch)
            fd = (up - down) / (2 * eps)
            assert abs(fd - flat_g[ci]) <= 1e-4 * max(1.0, abs(fd)), f"batch {bi} coord {ci}"

    # all-identical embeddings: exactly P*K*ln 2
    ident = EmbeddingModel(2, 2, seed=0)
    ident.params = [[np.eye(2), np.zeros(2)]]
    batch = TripletBatch(features=np.ones((4, 3, 2)))
    assert triplet_loss(ident, batch) == pytest.approx(12 * math.log(2), rel=1e-14)
    report(2, "200 enumeration batches exact; 20x50 FD checks at 1e-4; P*K*ln2 exact")


def _blob_data(rng, classes=4, dim=8, per_class=40, sep=10.0):
    feats, labels = [], []
    for c in range(classes):
        mean = np.zeros(dim)
        mean[c] = sep
        feats.append(mean + rng.normal(size=(per_class, dim)))
        labels += [c] * per_class
    return np.vstack(feats), np.array(labels)


def test_criterion_3_toy_training_separates_classes():
    start = time.monotonic()
    cfg = TrainConfig(
        lr_initial=1e-3,
        lr_decayed=1e-4,
        decay_after_samples=20_000,
        total_samples=30_000,
        num_classes_per_batch=4,
        per_class=4,
    )
    x, y = _blob_data(np.random.default_rng(0))
    model = train_embedding(x, y, cfg, seed=0, embed_dim=8)
    again = train_embedding(x, y, cfg, seed=0, embed_dim=8)
    assert np.array_equal(model.flat_params(), again.flat_params())

    x_hold, y_hold = _blob_data(np.random.default_rng(99), per_class=25)
    emb = model.forward(x_hold)
    intra, inter = [], []
    for i in range(len(emb)):
        for j in range(i + 1, len(emb)):
            d = np.linalg.norm(emb[i] - emb[j])
            (intra if y_hold[i] == y_hold[j] else inter).append(d)
    margin = np.mean(inter) / np.mean(intra)
    assert margin >= 2.0, f"margin {margin:.2f} below 2x"
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s"
    report(3, f"held-out inter/intra margin {margin:.1f}x, deterministic, {elapsed:.1f}s")


def test_criterion_4_hdbscan_oracle_fixture_invariance():
    rng = np.random.default_rng(4)
    # 100 random sets, n <= 50: heights equal the O(n^3) oracle exactly
    for trial in range(100):
        n = int(rng.integers(5, 51))
        pts = rng.normal(size=(n, 3))
        w = mutual_reachability_matrix(pts, core_distances(pts, min(4, n - 1)))
        merges = single_linkage_tree(build_mst(w), n)
        assert np.allclose(
            sorted(merges[:, 2]), naive_single_linkage_heights(w), rtol=0, atol=0
        ), f"trial {trial}"

    # 3-blob fixture at min_size=14
    blob_rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    pts = np.vstack([c + blob_rng.standard_normal((100, 2)) for c in centers])
    truth = np.repeat(np.arange(3), 100)
    result = hdbscan(pts, HdbscanConfig(min_size=14))
    assert result.n_clusters == 3
    keep = result.labels != NOISE
    score = ami(contingency(truth[keep], result.labels[keep]))
    assert score >= 0.95

    # partition invariant under 20 input permutations
    for shuffle in range(20):
        perm = np.random.default_rng(shuffle).permutation(len(pts))
        shuffled = hdbscan(pts[perm], HdbscanConfig(min_size=14))
        fwd, rev = {}, {}
        for orig, new in zip(result.labels[perm], shuffled.labels):
            assert fwd.setdefault(orig, new) == new, f"shuffle {shuffle}"
            assert rev.setdefault(new, orig) == orig, f"shuffle {shuffle}"
    report(4, f"100 linkage oracles exact; 3-blob AMI {score:.3f}; 20 shuffles invariant")


def test_criterion_5_metric_fixtures_chance_level_and_emi():
    # hand-computed 2x2 fixtures
    perfect = contingency([0, 0, 1, 1], [1, 1, 0, 0])
    assert mutual_information(perfect) == pytest.approx(math.log(2))
    assert ami(perfect) == pytest.approx(1.0)
    assert homogeneity_completeness(perfect) == (pytest.approx(1.0), pytest.approx(1.0))
    indep = contingency([0, 0, 1, 1], [0, 1, 0, 1])
    assert mutual_information(indep) == pytest.approx(0.0, abs=1e-15)
    mixed = contingency([0, 0, 1, 1], [0, 1, 1, 1])
    mi = mutual_information(mixed)
    emi = expected_mi(mixed)
    hu, hv = entropies(mixed)
    assert ami(mixed) == pytest.approx((mi - emi) / ((hu + hv) / 2 - emi), abs=1e-15)

    # chance level: 1000 points, 5 classes, 50 seeds, |mean AMI| <= 0.01
    vals = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        vals.append(ami(contingency(rng.integers(0, 5, 1000), rng.integers(0, 5, 1000))))
    assert abs(np.mean(vals)) <= 0.01, f"mean AMI {np.mean(vals):.4f}"

    # expected MI vs permutation Monte-Carlo, tables with N <= 30, 3 SE
    mc_rng = np.random.default_rng(123)
    for trial in range(4):
        n = int(mc_rng.integers(8, 31))
        u = mc_rng.integers(0, 3, n)
        v = mc_rng.integers(0, 3, n)
        emi = expected_mi(contingency(u, v))
        draws = np.empty(10_000)
        shuffled = v.copy()
        for i in range(len(draws)):
            mc_rng.shuffle(shuffled)
            draws[i] = mutual_information(contingency(u, shuffled))
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        assert abs(emi - draws.mean()) <= 3 * se, f"trial {trial}"

    # relabeling invariance on 100 random tables
    inv_rng = np.random.default_rng(7)
    for _ in range(100):
        a = inv_rng.integers(0, 4, 60)
        b = inv_rng.integers(0, 3, 60)
        base = ami(contingency(a, b))
        pa, pb = inv_rng.permutation(4), inv_rng.permutation(3)
        assert ami(contingency(pa[a], pb[b])) == pytest.approx(base, abs=1e-12)
    report(5, "fixtures exact; |mean chance AMI| <= 0.01; EMI within 3 SE; 100 relabelings")


def test_criterion_6_outlier_sweep_monotone_and_exact_baseline():
    rng = np.random.default_rng(9)
    truth = rng.integers(0, 3, 120)
    pred = truth.copy()
    flip = rng.random(120) < 0.3
    pred[flip] = (pred[flip] + 1) % 3
    scores = flip.astype(float)  # errors carry the top outlier scores
    fractions = [0.0, 0.1, 0.2, 0.3, 0.4]
    points = outlier_sweep(pred, truth, fractions, scores)
    amis = [p.ami for p in points]
    assert all(b >= a - 1e-12 for a, b in zip(amis, amis[1:])), amis
    tab = contingency(truth, pred)
    h, c = homogeneity_completeness(tab)
    assert points[0].ami == ami(tab)
    assert (points[0].homogeneity, points[0].completeness) == (h, c)
    report(6, f"AMI non-decreasing over f={fractions}; f=0 equals unswept metrics")


def _acceptance_scene(rng, grid=32):
    h = w = 4 * grid + 8
    # block-structured free space (ground band) plus speckle elsewhere
    free = rng.random((h, w)) < 0.5
    free[h // 2 :, :] = True
    depth = rng.uniform(1.0, 60.0, size=(h, w))
    depth[h // 2 :, :] = rng.uniform(1.0, 20.0, size=(h - h // 2, w))
    depth[rng.random((h, w)) < 0.1] = NO_DEPTH
    labels = ["car", "person", "unknown"]

    def rand_box():
        bw = int(rng.integers(3, 9))
        bh = int(rng.integers(3, 9))
        return Box(int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh)), bw, bh)

    boxes = [(rand_box(), labels[int(rng.integers(0, 3))]) for _ in range(4)]
    # an unknown track parked on the free-space band: anchors overlapping it
    # sit on >=0.9 free space, so the negatives2 relaxation can flip them
    bw, bh = int(rng.integers(6, 10)), int(rng.integers(6, 10))
    unknown = Box(int(rng.integers(0, w - bw)), int(rng.integers(h // 2, h - bh)), bw, bh)
    boxes.append((unknown, "unknown"))
    anchors = [
        Box(float(4 * x), float(4 * y), 6.0, 6.0) for y in range(grid) for x in range(grid)
    ]
    for i in range(5):
        anchors[i] = boxes[i][0]
    return SceneFrame(
        image_size=(h, w),
        anchors=tuple(anchors),
        track_boxes=tuple(boxes),
        free_space=free,
        depth=depth,
    )


def _anchor_oracle(anchor, s, cfg, variant):
    ys = slice(int(np.floor(anchor.y)), int(np.ceil(anchor.y + anchor.h)))
    xs = slice(int(np.floor(anchor.x)), int(np.ceil(anchor.x + anchor.w)))
    patch = s.depth[ys, xs]
    if np.mean((patch > cfg.far_distance_m) | (patch == NO_DEPTH)) >= cfg.far_pixel_fraction:
        return Outcome.EXCLUDED_FAR
    if any(
        lab != "unknown" and box_iou(anchor, b) > cfg.pos_iou for b, lab in s.track_boxes
    ):
        return Outcome.POSITIVE
    if variant == "full" and any(
        lab == "unknown" and box_iou(anchor, b) > cfg.unknown_ignore_iou
        for b, lab in s.track_boxes
    ):
        return Outcome.IGNORE
    if variant == "negatives1":
        return Outcome.NEGATIVE
    if np.mean(s.free_space[ys, xs]) >= cfg.neg_area_fraction:
        return Outcome.NEGATIVE
    return Outcome.IGNORE


def test_criterion_7_anchor_rules_oracle_thresholds_and_variants():
    cfg = AnchorConfig()
    rng = np.random.default_rng(42)
    differential_seen = False
    for trial in range(50):
        s = _acceptance_scene(rng)
        assert len(s.anchors) >= 1000
        per_variant = {}
        for variant in ("full", "negatives1", "negatives2"):
            decisions, _ = select_anchors(s, cfg, variant)
            per_variant[variant] = decisions
            for d, anchor in zip(decisions, s.anchors):
                assert d.outcome is _anchor_oracle(anchor, s, cfg, variant), (
                    f"trial {trial} variant {variant} anchor {d.anchor_index}"
                )
        has_unknown = any(lab == "unknown" for _, lab in s.track_boxes)
        if has_unknown:
            for df, d2 in zip(per_variant["full"], per_variant["negatives2"]):
                if df.outcome in (Outcome.POSITIVE, Outcome.EXCLUDED_FAR):
                    assert d2.outcome is df.outcome
                elif d2.outcome is not df.outcome:
                    assert df.outcome is Outcome.IGNORE
                    assert d2.outcome is Outcome.NEGATIVE
                    differential_seen = True
    assert differential_seen

    # exact threshold behaviour at the published constants
    h = w = 32
    base = dict(
        free=np.zeros((h, w), dtype=bool), depth=np.full((h, w), 10.0), boxes=()
    )

    def frame(**kw):
        p = {**base, **kw}
        return SceneFrame(
            image_size=(h, w),
            anchors=(),
            track_boxes=p["boxes"],
            free_space=p["free"],
            depth=p["depth"],
        )

    # positive needs IoU strictly > 0.5
    half = frame(boxes=((Box(2, 2, 4, 8), "car"),))
    anchor = Box(2, 2, 4, 4)
    assert box_iou(anchor, Box(2, 2, 4, 8)) == 0.5
    assert classify_anchor(anchor, half, cfg).outcome is not Outcome.POSITIVE
    above = frame(boxes=((Box(2, 2, 4, 6), "car"),))
    assert classify_anchor(anchor, above, cfg).outcome is Outcome.POSITIVE

    # containment fires at exactly 0.9
    free = np.zeros((h, w), dtype=bool)
    free[2, 2:11] = True  # 9 of the 10 anchor pixels
    strip = Box(2, 2, 10, 1)
    assert classify_anchor(strip, frame(free=free), cfg).outcome is Outcome.NEGATIVE
    free[2, 10] = False  # 8 of 10 = 0.8 < 0.9
    assert classify_anchor(strip, frame(free=free), cfg).outcome is Outcome.IGNORE

    # far fraction fires at exactly 0.5 of pixels beyond 30 m
    depth = np.full((h, w), 10.0)
    depth[2:6, 2:4] = 31.0  # half of the 4x4 anchor
    far_anchor = Box(2, 2, 4, 4)
    assert classify_anchor(far_anchor, frame(depth=depth), cfg).outcome is Outcome.EXCLUDED_FAR
    depth[2, 2] = 10.0  # 7/16 < 0.5
    assert classify_anchor(far_anchor, frame(depth=depth), cfg).outcome is not Outcome.EXCLUDED_FAR
    report(7, "50 scenes x >=1000 anchors oracle-exact; thresholds exact; variant differential holds")


def test_criterion_8_stats_reference_fixture():
    stats = mining_stats_from_counts(
        json.loads((FIXTURES / "kitti_counts.json").read_text())
    )
    assert stats.frames == 42_407
    assert stats.per_frame_proposals == 4_240_700
    assert stats.all_tracklets == 173_822
    assert stats.selected_tracklets == 16_141
    assert stats.tracks_total == 8_005
    assert f"{stats.proposals_per_track:.1f}" == "529.8"
    assert f"{stats.tracklets_per_track:.1f}" == "21.7"
    text = stats.report_text()
    for token in ("42407", "4240700", "173822", "16141", "8005", "529.8", "21.7"):
        assert token in text
    report(8, "reference mining-statistics fixture reproduced exactly")


def test_criterion_9_pipeline_deterministic_under_two_minutes(tmp_path, capsys):
    start = time.monotonic()
    data = tmp_path / "data"
    assert (
        main(
            [
                "synth", "--scenario", "blobs-embeddings", "--seed", "0",
                "--out", str(data), "--param", "classes=3",
                "--param", "per_class=60", "--param", "separation=12.0",
            ]
        )
        == 0
    )
    info = json.loads(capsys.readouterr().out)
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        f"embeddings = {info['features']}\ntruth = {info['labels']}\nfractions = 0,0.1\n"
    )
    out = tmp_path / "out"
    assert main(["pipeline", "--config", str(cfg_path), "--out", str(out)]) == 0
    first = {
        p.name: __import__("hashlib").sha256(p.read_bytes()).hexdigest()
        for p in out.iterdir()
    }
    assert main(["pipeline", "--config", str(cfg_path), "--out", str(out)]) == 0
    second = {
        p.name: __import__("hashlib").sha256(p.read_bytes()).hexdigest()
        for p in out.iterdir()
    }
    assert first == second
    report_json = json.loads((out / "report.json").read_text())
    assert report_json["final_ami"] >= 0.95
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"runtime {elapsed:.1f}s exceeds 2 min"
    report(9, f"bit-identical re-run, final AMI {report_json['final_ami']:.3f}, {elapsed:.1f}s")
