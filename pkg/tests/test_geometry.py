import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from beedet.geometry import (
    BoundingBox,
    ImageDims,
    NormCenterBox,
    OutOfBoundsError,
    clip_box,
    from_normalized,
    iou,
    iou_matrix,
    rotate_box,
    to_normalized,
)

from oracles import grid_iou


@st.composite
def box_in(draw, dims=ImageDims(100, 200), positive=False):
    xs = sorted(draw(st.floats(0, dims.width, allow_nan=False)) for _ in range(2))
    ys = sorted(draw(st.floats(0, dims.height, allow_nan=False)) for _ in range(2))
    box = BoundingBox(xs[0], ys[0], xs[1], ys[1])
    if positive:
        assume(box.width > 1e-3 and box.height > 1e-3)
    return box


def test_iou_identity_and_disjoint():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 30, 30)) == 0.0


def test_iou_half_overlap():
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-12)
    assert grid_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_iou_degenerate_boxes():
    p = BoundingBox(3, 3, 3, 3)
    assert iou(p, p) == 0.0
    assert iou(p, BoundingBox(0, 0, 10, 10)) == 0.0


@settings(max_examples=300)
@given(st.lists(st.integers(0, 12), min_size=8, max_size=8))
def test_iou_matches_cell_counting(v):
    a = (min(v[0], v[1]), min(v[2], v[3]), max(v[0], v[1]), max(v[2], v[3]))
    b = (min(v[4], v[5]), min(v[6], v[7]), max(v[4], v[5]), max(v[6], v[7]))
    assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(grid_iou(a, b), abs=1e-12)


def test_iou_matrix_agrees_with_scalar():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 50, size=(30, 4))
    boxes = [BoundingBox(min(p[0], p[2]), min(p[1], p[3]), max(p[0], p[2]), max(p[1], p[3])) for p in pts]
    m = iou_matrix(boxes[:12], boxes[12:])
    for i in range(12):
        for j in range(18):
            assert m[i, j] == pytest.approx(iou(boxes[i], boxes[12 + j]), abs=1e-12)
    assert iou_matrix([], boxes).shape == (0, 30)


@given(box_in(), box_in())
def test_iou_symmetric(a, b):
    assert iou(a, b) == iou(b, a)


@given(box_in(positive=True))
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


def test_rotate_examples():
    dims = ImageDims(100, 200)
    b = BoundingBox(10, 20, 30, 60)
    assert rotate_box(b, 0, dims) == (b, dims)
    assert rotate_box(b, 1, dims) == (BoundingBox(140, 10, 180, 30), ImageDims(200, 100))
    assert rotate_box(b, 2, dims) == (BoundingBox(70, 140, 90, 180), dims)


def test_rotate_matches_corner_mapping():
    # map corners through (x, y) -> (H - y, x) repeatedly
    dims = ImageDims(100, 200)
    corners = [(10, 20), (30, 60)]
    W, H = dims.width, dims.height
    for k in range(1, 4):
        corners = [(H - y, x) for x, y in corners]
        W, H = H, W
        xs, ys = [c[0] for c in corners], [c[1] for c in corners]
        box, out = rotate_box(BoundingBox(10, 20, 30, 60), k, dims)
        assert box.as_tuple() == (min(xs), min(ys), max(xs), max(ys))
        assert out == ImageDims(W, H)


def test_rotate_rejects_outside_box():
    with pytest.raises(OutOfBoundsError):
        rotate_box(BoundingBox(90, 0, 110, 10), 1, ImageDims(100, 100))
    with pytest.raises(ValueError):
        rotate_box(BoundingBox(0, 0, 1, 1), 4, ImageDims(100, 100))


@given(box_in())
def test_rotate_four_times_is_identity_and_area_preserving(b):
    dims = ImageDims(100, 200)
    cur, d = b, dims
    for _ in range(4):
        cur, d = rotate_box(cur, 1, d)
        assert cur.area == pytest.approx(b.area, rel=1e-12, abs=1e-9)
    assert d == dims
    np.testing.assert_allclose(cur.as_tuple(), b.as_tuple(), atol=1e-9)


# sub-ulp extents vanish once subtracted from the frame size, so the
# property is stated for boxes with a measurable extent
@given(box_in(positive=True), box_in(positive=True), st.integers(0, 3))
def test_iou_invariant_under_rotation(a, b, k):
    dims = ImageDims(100, 200)
    ra, _ = rotate_box(a, k, dims)
    rb, _ = rotate_box(b, k, dims)
    assert iou(ra, rb) == pytest.approx(iou(a, b), abs=1e-9)


def test_normalized_examples():
    dims = ImageDims(100, 200)
    assert to_normalized(BoundingBox(0, 0, 100, 200), dims) == NormCenterBox(0.5, 0.5, 1.0, 1.0)
    assert to_normalized(BoundingBox(25, 50, 75, 150), dims) == NormCenterBox(0.5, 0.5, 0.5, 0.5)


def test_normalized_round_trip_random():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(1000):
        dims = ImageDims(int(rng.integers(1, 4000)), int(rng.integers(1, 4000)))
        xs = np.sort(rng.uniform(0, dims.width, 2))
        ys = np.sort(rng.uniform(0, dims.height, 2))
        b = BoundingBox(xs[0], ys[0], xs[1], ys[1])
        back = from_normalized(to_normalized(b, dims), dims)
        worst = max(worst, np.max(np.abs(np.subtract(back.as_tuple(), b.as_tuple()))))
    assert worst < 1e-6


def test_invalid_inputs():
    with pytest.raises(ValueError):
        ImageDims(0, 10)
    with pytest.raises(ValueError):
        BoundingBox(5, 0, 1, 1)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, float("nan"), 1)


def test_clip_box():
    dims = ImageDims(640, 640)
    assert clip_box(BoundingBox(630, -5, 650, 10), dims) == BoundingBox(630, 0, 640, 10)
    assert clip_box(BoundingBox(650, 0, 660, 10), dims).area == 0.0
