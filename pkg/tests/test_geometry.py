import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trackmine.errors import SizeMismatchError
from trackmine.geometry import (
    Box,
    MaskRLE,
    Tracklet,
    box_iou,
    decode_rle,
    encode_rle,
    load_tracklets,
    mask_iou,
    save_tracklets,
    tracklet_from_json,
    tracklet_to_json,
    Frame,
)


def rect_mask(size, x, y, w, h):
    m = np.zeros(size, dtype=bool)
    m[y : y + h, x : x + w] = True
    return encode_rle(m)


class TestRLE:
    def test_all_zeros(self):
        m = MaskRLE(size=(2, 2), counts=(4,))
        assert not decode_rle(m).any()

    def test_all_ones(self):
        m = MaskRLE(size=(2, 2), counts=(0, 4))
        assert decode_rle(m).all()

    def test_column_major_scan(self):
        # counts (1,2,3): one zero, two ones, three zeros in column order
        m = MaskRLE(size=(3, 2), counts=(1, 2, 3))
        expected = np.array([[0, 0], [1, 0], [1, 0]], dtype=bool)
        assert np.array_equal(decode_rle(m), expected)
        assert encode_rle(decode_rle(m)) == m

    def test_bad_counts_sum(self):
        with pytest.raises(SizeMismatchError):
            MaskRLE(size=(2, 2), counts=(3,))

    @given(
        arrays(
            dtype=bool,
            shape=st.tuples(st.integers(1, 12), st.integers(1, 12)),
        )
    )
    def test_round_trip(self, mask):
        assert np.array_equal(decode_rle(encode_rle(mask)), mask)


class TestMaskIoU:
    def test_identical(self):
        m = rect_mask((8, 8), 1, 1, 3, 3)
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = rect_mask((8, 8), 0, 0, 2, 2)
        b = rect_mask((8, 8), 5, 5, 2, 2)
        assert mask_iou(a, b) == 0.0

    def test_half_overlap(self):
        # 4-pixel mask vs 8-pixel mask sharing 4 pixels
        a = rect_mask((8, 8), 0, 0, 2, 2)
        b = rect_mask((8, 8), 0, 0, 2, 4)
        assert mask_iou(a, b) == pytest.approx(0.5)

    def test_both_empty(self):
        e = encode_rle(np.zeros((4, 4), dtype=bool))
        assert mask_iou(e, e) == 0.0

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatchError):
            mask_iou(rect_mask((4, 4), 0, 0, 1, 1), rect_mask((4, 5), 0, 0, 1, 1))

    def test_matches_pixel_set_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            h, w = rng.integers(1, 65, size=2)
            a = rng.random((h, w)) < 0.4
            b = rng.random((h, w)) < 0.4
            inter = int((a & b).sum())
            union = int((a | b).sum())
            expect = inter / union if union else 0.0
            assert mask_iou(encode_rle(a), encode_rle(b)) == pytest.approx(expect)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = encode_rle(rng.random((9, 7)) < 0.5)
            b = encode_rle(rng.random((9, 7)) < 0.5)
            assert mask_iou(a, b) == mask_iou(b, a)
            assert 0.0 <= mask_iou(a, b) <= 1.0


class TestBoxIoU:
    def test_identical(self):
        b = Box(1, 2, 3, 4)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        assert box_iou(Box(0, 0, 1, 1), Box(5, 5, 1, 1)) == 0.0

    def test_third_overlap(self):
        # intersection 2, union 6
        assert box_iou(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) == pytest.approx(1 / 3)

    def test_invalid_extent(self):
        with pytest.raises(ValueError):
            Box(0, 0, 0, 1)

    @given(
        st.tuples(*[st.floats(-10, 10) for _ in range(2)], *[st.floats(0.1, 10) for _ in range(2)]),
        st.tuples(*[st.floats(-10, 10) for _ in range(2)], *[st.floats(0.1, 10) for _ in range(2)]),
    )
    @settings(max_examples=200)
    def test_symmetric_bounded(self, p, q):
        a, b = Box(*p), Box(*q)
        v = box_iou(a, b)
        assert v == box_iou(b, a)
        assert 0.0 <= v <= 1.0


class TestTrackletModel:
    def test_frames_strictly_increasing(self):
        f = Frame(t=0, box=Box(0, 0, 1, 1), mask=rect_mask((4, 4), 0, 0, 1, 1))
        with pytest.raises(ValueError):
            Tracklet(id=0, frames=(f, f))

    def test_jsonl_round_trip(self, tmp_path):
        frames = tuple(
            Frame(t=t, box=Box(t, 0, 2, 2), mask=rect_mask((6, 6), t, 0, 2, 2))
            for t in range(3)
        )
        tr = Tracklet(id=5, frames=frames, class_label="car")
        path = tmp_path / "t.jsonl"
        save_tracklets(path, [tr])
        (loaded,) = load_tracklets(path)
        assert loaded == tr

    def test_json_shape(self):
        frames = (Frame(t=1, box=Box(0, 0, 1, 1), mask=rect_mask((2, 2), 0, 0, 1, 1)),)
        d = tracklet_to_json(Tracklet(id=3, frames=frames))
        assert d["id"] == 3 and d["class"] == "unknown"
        assert d["frames"][0]["box"] == [0, 0, 1, 1]
        assert d["frames"][0]["mask"]["size"] == [2, 2]
        assert tracklet_from_json(d).frames[0].t == 1
