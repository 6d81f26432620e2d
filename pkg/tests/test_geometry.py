from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drowsynet.geometry import (AnnotationError, AnnotationFileProvider, BBox, Landmarks, PatchMargins,
                                StaticFaceProvider, clamp_box, crop, format_annotation_line, iou, nms,
                                parse_annotation_line, patch_boxes)

from oracles import nms_exhaustive


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BBox(10, 0, 20, 10)) == 0.0  # touching edges
    assert iou(a, BBox(5, 5, 15, 15)) == 25 / 175
    assert Fraction(iou(a, BBox(5, 5, 15, 15))).limit_denominator(1000) == Fraction(1, 7)


coords = st.integers(0, 20)


@st.composite
def boxes(draw):
    x1, y1 = draw(coords), draw(coords)
    return BBox(x1, y1, x1 + draw(st.integers(1, 12)), y1 + draw(st.integers(1, 12)), draw(st.sampled_from([0.1, 0.5, 0.9])))


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == 1.0


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(5, 0, 5, 10)
    with pytest.raises(ValueError):
        BBox(0, 0, 1, 1, score=1.5)


def test_nms_examples():
    assert nms([], 0.5) == []
    one = BBox(0, 0, 4, 4, 0.3)
    assert nms([one], 0.5) == [one]
    hi, lo = BBox(0, 0, 10, 10, 0.9), BBox(0, 0, 10, 10, 0.8)
    assert nms([lo, hi], 0.5) == [hi]
    a, b, c = BBox(0, 0, 10, 10, 0.9), BBox(1, 1, 11, 11, 0.8), BBox(20, 20, 30, 30, 0.7)
    assert iou(a, b) == pytest.approx(81 / 119)
    assert nms([a, b, c], 0.5) == [a, c]


def test_nms_equal_scores_prefer_lower_index():
    a, b = BBox(0, 0, 10, 10, 0.5), BBox(1, 0, 11, 10, 0.5)
    assert nms([a, b], 0.5) == [a]
    assert nms([b, a], 0.5) == [b]


def test_nms_threshold_is_inclusive():
    # IoU exactly 1/3 suppresses at N = 1/3
    a, b = BBox(0, 0, 2, 1, 0.9), BBox(1, 0, 3, 1, 0.8)
    assert iou(a, b) == 1 / 3
    assert nms([a, b], 1 / 3) == [a]
    assert nms([a, b], 0.34) == [a, b]


def test_nms_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(0, 9))
        bs = []
        for _ in range(n):
            x1, y1 = rng.integers(0, 12, size=2)
            w, h = rng.integers(1, 8, size=2)
            bs.append(BBox(float(x1), float(y1), float(x1 + w), float(y1 + h), float(rng.integers(0, 5)) / 4))
        thr = float(rng.choice([0.1, 0.25, 1 / 3, 0.5, 0.7]))
        want = nms_exhaustive([(b.x1, b.y1, b.x2, b.y2) for b in bs], [b.score for b in bs], thr)
        got = nms(bs, thr)
        assert [id(b) for b in got] == [id(bs[i]) for i in want]


@given(st.lists(boxes(), max_size=8), st.floats(0.05, 0.95))
def test_nms_output_properties(bs, thr):
    out = nms(bs, thr)
    assert all(a.score >= b.score for a, b in zip(out, out[1:]))
    assert all(iou(a, b) < thr for i, a in enumerate(out) for b in out[i + 1:])


def _lm(le=(40, 50), re=(60, 50), mouth=((42, 80), (58, 80))):
    return Landmarks(le, re, (50, 65), *mouth)


def test_patch_boxes_examples():
    face = BBox(20, 20, 80, 100)
    b = patch_boxes(_lm(), face)
    assert (b["eye"].x1, b["eye"].y1, b["eye"].x2, b["eye"].y2) == (30, 42, 70, 58)
    assert b["head"] == face
    assert b["eye"].center == (50, 50)
    assert b["mouth"].center == (50, 80)
    assert b["mouth"].width == pytest.approx(1.6 * 16) and b["mouth"].height == pytest.approx(1.2 * 16)


def test_patch_boxes_margins_configurable():
    b = patch_boxes(_lm(), BBox(0, 0, 100, 100), margins=PatchMargins(1.0, 1.0, 1.0, 1.0))
    assert b["eye"].width == 20 and b["eye"].height == 20


def test_patch_boxes_degenerate():
    with pytest.raises(ValueError):
        Landmarks((5, 5), (5, 5), (1, 1), (2, 2), (3, 3))
    with pytest.raises(ValueError):
        patch_boxes(_lm(mouth=((50, 80), (50, 80))), BBox(0, 0, 10, 10))


@given(st.floats(-50, 150), st.floats(-50, 150), st.floats(1, 60), st.floats(-0.5, 0.5))
def test_patch_boxes_clamped_within_image(cx, cy, d, tilt):
    lm = Landmarks((cx - d / 2, cy - tilt * d), (cx + d / 2, cy + tilt * d), (cx, cy + d / 2),
                   (cx - d / 3, cy + d), (cx + d / 3, cy + d))
    out = patch_boxes(lm, BBox(cx - d, cy - d, cx + d, cy + 2 * d), (96, 64))
    for b in out.values():
        assert 0 <= b.x1 < b.x2 <= 96 and 0 <= b.y1 < b.y2 <= 64


def test_clamp_box_keeps_one_pixel():
    b = clamp_box(BBox(200, 200, 300, 300), 50, 40)
    assert (b.x1, b.y1, b.x2, b.y2) == (49, 39, 50, 40)


def test_crop_examples():
    img = np.arange(48, dtype=np.uint8).reshape(6, 8)
    assert np.array_equal(crop(img, BBox(0, 0, 8, 6)), img)
    assert crop(img, BBox(3, 2, 4, 3)).tolist() == [[img[2, 3]]]
    assert np.array_equal(crop(img, BBox(1.4, 0.6, 5.5, 4.49)), img[1:4, 1:6])


def test_annotation_round_trip(tmp_path):
    box, lm = BBox(10, 12, 70, 90.5), _lm()
    line = format_annotation_line(7, box, lm)
    idx, b2, lm2 = parse_annotation_line(line)
    assert idx == 7 and b2 == box and lm2 == lm
    p = tmp_path / "ann.txt"
    p.write_text("# header\n\n" + line + "  # trailing\n")
    prov = AnnotationFileProvider(p)
    assert prov.face(7) == (box, lm)
    with pytest.raises(AnnotationError, match="frame 8"):
        prov.face(8)
    p.write_text("1 2 3\n")
    with pytest.raises(AnnotationError, match="ann.txt:1"):
        AnnotationFileProvider(p)


def test_static_provider():
    prov = StaticFaceProvider([(BBox(0, 0, 5, 5), _lm())])
    assert prov.face(0)[0] == BBox(0, 0, 5, 5)
    with pytest.raises(AnnotationError):
        prov.face(1)
