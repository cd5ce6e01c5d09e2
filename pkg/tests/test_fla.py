import numpy as np
import pytest
from hypothesis import given, strategies as st

from cim.errors import EmptyInput, InvalidThreshold, NoBoxes, ShapeMismatch
from cim.fla import (
    FlaScore,
    FocusRegion,
    aggregate,
    format_percent,
    report_to_csv,
    report_to_dict,
    report_to_json,
    score,
    threshold_focus,
)
from cim.mapping import NormalizedHeatmap
from cim.tensor_io import BoundingBox


def region(mask):
    mask = np.asarray(mask, dtype=bool)
    return FocusRegion(mask=mask, pixel_count=int(mask.sum()))


def box(image_id="img", x0=0, y0=0, x1=5, y1=5, w=10, h=10):
    return BoundingBox(image_id, x0, y0, x1, y1, w, h)


# --- thresholding ---

def test_all_zero_map_gives_empty_focus():
    focus = threshold_focus(NormalizedHeatmap(np.zeros((4, 4))), 0.6)
    assert focus.pixel_count == 0
    assert not focus.mask.any()


def test_single_peak():
    vals = np.zeros((4, 4))
    vals[2, 1] = 255.0
    focus = threshold_focus(NormalizedHeatmap(vals), 0.6)
    assert focus.pixel_count == 1
    assert focus.mask[2, 1]


def test_ramp_threshold_is_strict():
    # values 0..255; "larger than" 0.6*255 = 153 keeps exactly 154..255
    ramp = NormalizedHeatmap(np.arange(256, dtype=float).reshape(16, 16))
    focus = threshold_focus(ramp, 0.6)
    assert focus.pixel_count == 102
    flat = focus.mask.reshape(-1)
    assert not flat[153]
    assert flat[154]


@pytest.mark.parametrize("t", [0.0, 1.0, -0.5, 2.0])
def test_invalid_threshold(t):
    with pytest.raises(InvalidThreshold):
        threshold_focus(NormalizedHeatmap(np.zeros((2, 2))), t)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9), st.floats(0.05, 0.09))
def test_focus_shrinks_as_threshold_rises(seed, t_low, dt):
    vals = np.random.default_rng(seed).uniform(0, 255, size=(6, 6))
    nhm = NormalizedHeatmap(vals)
    low = threshold_focus(nhm, t_low).mask
    high = threshold_focus(nhm, min(t_low + dt, 0.99)).mask
    assert not (high & ~low).any()  # high-threshold mask is a subset


# --- scoring ---

def test_focus_equals_bbox():
    mask = np.zeros((10, 10), bool)
    mask[0:5, 0:5] = True
    s = score(region(mask), [box(x0=0, y0=0, x1=5, y1=5)])
    assert (s.fla1, s.fla2) == (1.0, 1.0)
    assert not s.degenerate


def test_focus_disjoint_from_bbox():
    mask = np.zeros((10, 10), bool)
    mask[9, 9] = True
    s = score(region(mask), [box(x0=0, y0=0, x1=3, y1=3)])
    assert (s.fla1, s.fla2) == (0.0, 0.0)


def test_half_overlap_worked_example():
    # bbox: left 5x10 half (50 px); focus: top 10x5 half (50 px); overlap 25
    mask = np.zeros((10, 10), bool)
    mask[0:5, :] = True
    s = score(region(mask), [box(x0=0, y0=0, x1=5, y1=10)])
    assert s.bbox_pixels == 50
    assert s.focus_pixels == 50
    assert s.intersection_pixels == 25
    assert (s.fla1, s.fla2) == (0.5, 0.5)


def test_empty_focus_is_degenerate():
    s = score(region(np.zeros((10, 10), bool)), [box()])
    assert s.degenerate
    assert (s.fla1, s.fla2) == (0.0, 0.0)


def test_focus_inside_bbox_fla2_is_one():
    mask = np.zeros((10, 10), bool)
    mask[1, 1] = True
    s = score(region(mask), [box(x0=0, y0=0, x1=5, y1=5)])
    assert s.fla2 == 1.0
    assert s.fla1 == 1 / 25


def test_bbox_inside_focus_fla1_is_one():
    mask = np.ones((10, 10), bool)
    s = score(region(mask), [box(x0=2, y0=2, x1=4, y1=4)])
    assert s.fla1 == 1.0
    assert s.fla2 == 4 / 100


def test_multi_box_union_and_order_invariance():
    mask = np.zeros((10, 10), bool)
    mask[0:10, 0:10:2] = True  # vertical stripes, 50 px
    boxes = [box(x0=0, y0=0, x1=4, y1=4), box(x0=2, y0=2, x1=6, y1=6),
             box(x0=0, y0=0, x1=2, y1=2)]  # overlapping + nested
    s1 = score(region(mask), boxes)
    s2 = score(region(mask), boxes[::-1])
    assert s1 == s2
    # union area: 4x4 plus 4x4 overlapping at 2x2 = 16 + 16 - 4 = 28
    assert s1.bbox_pixels == 28


def test_score_error_paths():
    mask = np.zeros((10, 10), bool)
    with pytest.raises(NoBoxes):
        score(region(mask), [])
    with pytest.raises(ShapeMismatch):
        score(region(mask), [box(), box(image_id="other")])
    with pytest.raises(ShapeMismatch):
        score(region(mask), [box(w=12, h=10)])


def test_intersection_bound_invariant():
    rng = np.random.default_rng(20)
    for _ in range(50):
        mask = rng.random((8, 8)) < 0.4
        x0, y0 = rng.integers(0, 4, size=2)
        x1, y1 = x0 + rng.integers(1, 5), y0 + rng.integers(1, 5)
        s = score(region(mask), [box(x0=int(x0), y0=int(y0), x1=int(x1), y1=int(y1), w=8, h=8)])
        assert s.intersection_pixels <= min(s.focus_pixels, s.bbox_pixels)
        assert 0.0 <= s.fla1 <= 1.0
        assert 0.0 <= s.fla2 <= 1.0


# --- aggregation ---

def make_score(i, fla1, fla2, degenerate=False):
    return FlaScore(f"im{i}", fla1, fla2, 10, 10, int(fla1 * 10), degenerate)


def test_aggregate_singleton():
    r = aggregate([make_score(0, 0.4, 0.6)], 0.6)
    assert (r.mean_fla1, r.mean_fla2) == (0.4, 0.6)
    assert r.n_images == 1


def test_aggregate_symmetric_pair():
    r = aggregate([make_score(0, 1.0, 1.0), make_score(1, 0.0, 0.0)], 0.6)
    assert (r.mean_fla1, r.mean_fla2) == (0.5, 0.5)


def test_aggregate_identical_scores():
    r = aggregate([make_score(i, 0.3, 0.7) for i in range(5)], 0.6)
    assert r.mean_fla1 == pytest.approx(0.3)
    assert r.mean_fla2 == pytest.approx(0.7)


def test_aggregate_counts_degenerates():
    r = aggregate([make_score(0, 0.5, 0.0, degenerate=True),
                   make_score(1, 0.5, 1.0)], 0.6)
    assert r.n_degenerate == 1
    assert r.mean_fla2 == 0.5  # degenerate zero still contributes


def test_aggregate_empty_raises():
    with pytest.raises(EmptyInput):
        aggregate([], 0.6)


# --- serialization ---

def test_csv_has_header_and_rows():
    r = aggregate([make_score(0, 0.25, 0.75)], 0.6)
    text = report_to_csv(r)
    lines = text.strip().split("\n")
    assert lines[0] == ("image_id,fla1,fla2,focus_pixels,bbox_pixels,"
                        "intersection_pixels,degenerate")
    assert lines[1].startswith("im0,0.25,0.75,10,10,2,false")


def test_json_round_trips():
    import json
    r = aggregate([make_score(0, 0.25, 0.75)], 0.6)
    data = json.loads(report_to_json(r, skipped=["gone"]))
    assert data["mean_fla1"] == 0.25
    assert data["per_image"][0]["image_id"] == "im0"
    assert data["skipped"] == ["gone"]
    assert "skipped" not in report_to_dict(r)


def test_percent_formatting():
    assert format_percent(0.439) == "43.9"
    assert format_percent(0.589) == "58.9"
    assert format_percent(1.0) == "100.0"


def test_focus_region_count_validation():
    with pytest.raises(ShapeMismatch):
        FocusRegion(mask=np.ones((2, 2), bool), pixel_count=3)
    with pytest.raises(ShapeMismatch):
        FocusRegion(mask=np.ones((2, 2)), pixel_count=4)  # not boolean
