import pytest

from beedet.augment import (
    ENTRIES_PER_IMAGE,
    GEOMETRIC_STYLES,
    STYLES,
    AugPlanEntry,
    AugStyle,
    format_plan_line,
    output_image_id,
    plan_expansion,
    plan_histogram,
    read_plan,
    style_params,
    transform_annotations,
    write_plan,
)
from beedet.dataset import Annotation, LabeledImage, histogram, parse_annotation_file
from beedet.geometry import BoundingBox, ImageDims, rotate_box

from synth import build_split

DIMS = ImageDims(640, 480)


def _img(image_id="img", boxes=((10, 20, 60, 90), (300, 200, 340, 260))):
    return LabeledImage(image_id, DIMS, tuple(Annotation(k % 2, BoundingBox(*b)) for k, b in enumerate(boxes)))


def test_single_image_expands_to_44():
    plan = plan_expansion([_img()], master_seed=7)
    assert len(plan) == 44 == ENTRIES_PER_IMAGE
    assert sum(e.style is None for e in plan) == 4
    for k in range(4):
        entries = [e for e in plan if e.quarter_turns == k]
        assert len(entries) == 11
        assert sum(e.style is None for e in entries) == 1


def test_output_ids_unique_and_sorted():
    plan = plan_expansion([_img("a"), _img("b")], master_seed=1)
    ids = [e.output_id for e in plan]
    assert len(set(ids)) == len(ids) == 88
    assert ids == sorted(ids)
    assert "a_r90_aorig" in ids
    assert output_image_id("a", 3, "translate", 4) == "a_r270_atranslate_04"


def test_plan_is_deterministic_and_seed_dependent():
    imgs = build_split("s", 5, {1: 7, 6: 3})
    a = plan_expansion(imgs, 123)
    b = plan_expansion(imgs, 123)
    c = plan_expansion(imgs, 124)
    assert [format_plan_line(e, "x") for e in a] == [format_plan_line(e, "x") for e in b]
    assert a == b
    assert [e.seed for e in a] != [e.seed for e in c]


def test_parallel_generation_matches_serial():
    imgs = build_split("p", 12, {1: 20, 5: 4, 6: 9})
    assert plan_expansion(imgs, 9, n_jobs=4) == plan_expansion(imgs, 9)
    assert plan_expansion(list(reversed(imgs)), 9) == plan_expansion(imgs, 9)


def test_rejects_non_train_and_empty():
    with pytest.raises(ValueError):
        plan_expansion([_img()], 0, split="val")
    with pytest.raises(ValueError):
        plan_expansion([], 0)
    with pytest.raises(ValueError):
        plan_expansion([_img()], 0, styles=("sharpen",))


def test_styles_are_drawn_from_the_fixed_set():
    plan = plan_expansion(build_split("q", 20, {1: 20}), 5)
    used = {e.style.style_id for e in plan if e.style is not None}
    assert used <= set(STYLES)
    assert len(used) == 10  # 800 draws cover all ten styles
    assert len(STYLES) == 10 and GEOMETRIC_STYLES == {"random-erase", "translate"}


def test_unstyled_zero_rotation_matches_source():
    imgs = build_split("h", 6, {1: 9, 5: 3, 6: 5})
    plan = plan_expansion(imgs, 11)
    originals = [e for e in plan if e.quarter_turns == 0 and e.style is None]
    assert plan_histogram(originals) == histogram(imgs).counts
    src = {i.image_id: i for i in imgs}
    for e in originals:
        assert e.annotations == src[e.source_id].annotations


def test_all_output_boxes_in_frame():
    imgs = [_img(f"i{n}", ((0, 0, 640, 480), (600, 400, 640, 480), (0, 440, 30, 480))) for n in range(8)]
    for e in plan_expansion(imgs, 3):
        for a in e.annotations:
            assert a.box.within(e.dims, eps=0.0)
            assert a.box.area > 0


def _entry(style, k=0, src_dims=ImageDims(640, 640)):
    dims = src_dims.rotated(k)
    return AugPlanEntry("o", "s", k, 1 if style else 0, style, 0, dims)


def test_non_geometric_style_keeps_rotated_boxes():
    anns = [Annotation(0, BoundingBox(10, 20, 30, 60))]
    blur = AugStyle("gaussian-blur", {"sigma": 1.0})
    for k in range(4):
        rotated = transform_annotations(anns, _entry(None, k))
        assert transform_annotations(anns, _entry(blur, k)) == rotated
        assert rotated[0].box == rotate_box(anns[0].box, k, ImageDims(640, 640))[0]


def test_translate_drops_box_pushed_out_of_frame():
    anns = [Annotation(1, BoundingBox(630, 0, 640, 10))]
    entry = _entry(AugStyle("translate", {"dx": 10, "dy": 0}))
    assert transform_annotations(anns, entry, retention=0.3) == []


def test_translate_clips_and_retains():
    anns = [Annotation(1, BoundingBox(600, 0, 640, 10))]
    entry = _entry(AugStyle("translate", {"dx": 20, "dy": 0}))
    (out,) = transform_annotations(anns, entry, retention=0.3)
    assert out.box == BoundingBox(620, 0, 640, 10)
    assert transform_annotations(anns, entry, retention=0.6) == []


def test_random_erase_drops_mostly_hidden_box():
    anns = [Annotation(0, BoundingBox(100, 100, 120, 120)), Annotation(0, BoundingBox(300, 300, 320, 320))]
    entry = _entry(AugStyle("random-erase", {"x_min": 95, "y_min": 95, "x_max": 118, "y_max": 130}))
    out = transform_annotations(anns, entry)
    assert [a.box for a in out] == [anns[1].box]


def test_half_turn_of_centered_box():
    dims = ImageDims(640, 480)
    box = BoundingBox(300, 200, 340, 280)
    (out,) = transform_annotations([Annotation(0, box)], _entry(None, 2, dims))
    assert out.box == box


def test_style_params_reproducible_and_in_frame():
    dims = ImageDims(320, 200)
    for seed in range(200):
        for s in STYLES:
            assert style_params(s, seed, dims) == style_params(s, seed, dims)
        p = style_params("random-erase", seed, dims)
        assert 0 <= p["x_min"] < p["x_max"] <= 320 and 0 <= p["y_min"] < p["y_max"] <= 200
        t = style_params("translate", seed, dims)
        assert abs(t["dx"]) <= 32 and abs(t["dy"]) <= 20


def test_plan_file_round_trip(tmp_path):
    imgs = build_split("f", 2, {1: 3, 6: 2})
    plan = plan_expansion(imgs, 99)
    path = write_plan(plan, tmp_path)
    records = read_plan(path)
    assert len(records) == 88
    for rec, e in zip(records, plan):
        assert rec["output_id"] == e.output_id and rec["seed"] == e.seed and rec["dims"] == e.dims
        assert rec["style_id"] == e.style_id
        text = (tmp_path / rec["annotation_path"]).read_text()
        back = parse_annotation_file(text, e.dims)
        assert [a.label for a in back] == [a.label for a in e.annotations]
        if e.style is not None:
            assert style_params(e.style_id, rec["seed"], rec["dims"]) == e.style.params
