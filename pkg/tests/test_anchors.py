import math

import numpy as np
import pytest

from beedet.anchors import (
    DEFAULT_YOLO_ANCHORS,
    MOBILENET_V2_LAYERS,
    VGG16_LAYERS,
    ConfigError,
    SsdLayerConfig,
    expected_prior_count,
    format_layer_config,
    mite_anchor_fit,
    parse_anchor_config,
    parse_layer_config,
    priors_to_array,
    ssd_priors,
    yolo_grid_shapes,
    yolo_num_predictions,
)


def test_yolo_shapes_at_640():
    assert yolo_grid_shapes(DEFAULT_YOLO_ANCHORS, 2) == [(3, 80, 80, 7), (3, 40, 40, 7), (3, 20, 20, 7)]
    assert yolo_num_predictions(DEFAULT_YOLO_ANCHORS) == 3 * (80**2 + 40**2 + 20**2) == 25200


def test_yolo_default_anchor_values():
    assert [s.stride for s in DEFAULT_YOLO_ANCHORS.scales] == [8, 16, 32]
    assert DEFAULT_YOLO_ANCHORS.scales[0].anchors == ((10, 13), (16, 30), (33, 23))
    assert DEFAULT_YOLO_ANCHORS.scales[1].anchors == ((30, 61), (62, 45), (59, 119))
    assert DEFAULT_YOLO_ANCHORS.scales[2].anchors == ((116, 90), (156, 198), (373, 326))


def test_yolo_rejects_indivisible_input():
    with pytest.raises(ConfigError):
        yolo_grid_shapes(DEFAULT_YOLO_ANCHORS.with_input_size(641), 2)


def test_vgg_prior_count():
    priors = ssd_priors(VGG16_LAYERS, 300)
    assert [l.boxes_per_cell for l in VGG16_LAYERS] == [4, 6, 6, 6, 4, 4]
    assert len(priors) == 4 * 38**2 + 6 * 19**2 + 6 * 10**2 + 6 * 5**2 + 4 * 3**2 + 4 * 1**2 == 8732


def test_last_layer_prior_shapes():
    layer = SsdLayerConfig(1, 300, 195, 240, (1, 2), 4)
    priors = ssd_priors([layer], 300)
    assert len(priors) == 4
    got = [p.box.as_tuple() for p in priors]
    s = 195 / 300
    expected = [
        (0.5, 0.5, 0.65, 0.65),
        (0.5, 0.5, math.sqrt(195 * 240) / 300, math.sqrt(195 * 240) / 300),
        (0.5, 0.5, s * math.sqrt(2), s / math.sqrt(2)),
        (0.5, 0.5, s / math.sqrt(2), s * math.sqrt(2)),
    ]
    np.testing.assert_allclose(got, expected, atol=1e-12)
    assert got[1][2] == pytest.approx(0.7211, abs=1e-4)
    assert got[2][2] == pytest.approx(0.9192, abs=1e-4) and got[2][3] == pytest.approx(0.4596, abs=1e-4)


@pytest.mark.parametrize("layers", [VGG16_LAYERS, MOBILENET_V2_LAYERS])
def test_prior_invariants(layers):
    priors = ssd_priors(layers, 300)
    assert len(priors) == expected_prior_count(layers)
    arr = priors_to_array(priors)
    assert np.all(arr[:, :2] >= 0) and np.all(arr[:, :2] <= 1)
    assert np.all(arr[:, 2:] > 0) and np.all(arr[:, 2:] <= 1)
    corners = np.c_[arr[:, :2] - arr[:, 2:] / 2, arr[:, :2] + arr[:, 2:] / 2]
    assert corners.min() >= -1e-12 and corners.max() <= 1 + 1e-12
    keys = [(p.layer, p.cell, p.slot) for p in priors]
    assert keys == sorted(keys)


def test_ratio_pairs_have_equal_area_unclipped():
    unclipped = ssd_priors(VGG16_LAYERS, 300, clip=False)
    by_cell = {}
    for p in unclipped:
        by_cell.setdefault((p.layer, p.cell), []).append(p.box)
    for boxes in by_cell.values():
        for a, b in zip(boxes[2::2], boxes[3::2]):
            assert a.w * a.h == pytest.approx(b.w * b.h, rel=1e-12)
            assert a.w * a.h == pytest.approx(boxes[0].w * boxes[0].h, rel=1e-12)


def test_generation_is_deterministic():
    a = priors_to_array(ssd_priors(MOBILENET_V2_LAYERS, 300))
    b = priors_to_array(ssd_priors(MOBILENET_V2_LAYERS, 300))
    assert np.array_equal(a, b)


def test_layer_validation():
    with pytest.raises(ConfigError):
        SsdLayerConfig(3, 100, 30, 15)
    with pytest.raises(ConfigError):
        SsdLayerConfig(3, 100, 15, 30, (1, 2), 6)
    with pytest.raises(ConfigError):
        SsdLayerConfig(3, 100, 15, 30, (1, 2, 3), 4)
    with pytest.raises(ConfigError):
        SsdLayerConfig(3, 100, 15, 30, (1, 2), 5)


def test_layer_config_round_trip():
    text = format_layer_config(VGG16_LAYERS)
    assert parse_layer_config(text) == list(VGG16_LAYERS)
    assert parse_layer_config("38 16 15 30 [1,2] 4\n")[0].box_min == 15
    with pytest.raises(ConfigError):
        parse_layer_config("38 16 15 30 1,2\n")
    with pytest.raises(ConfigError):
        parse_layer_config("38 16 15 30 1,2 6\n")


def test_anchor_config_parse():
    cfg = parse_anchor_config("input_size 320\n8 10,13 16,30 33,23\n16 30,61 62,45 59,119\n32 116,90 156,198 373,326\n")
    assert cfg.input_size == 320
    assert yolo_grid_shapes(cfg, 1)[0] == (3, 40, 40, 6)
    assert parse_anchor_config("", 640) == DEFAULT_YOLO_ANCHORS
    with pytest.raises(ConfigError):
        parse_anchor_config("8 10\n")


def test_mite_fit_exact_small_square():
    priors = ssd_priors(VGG16_LAYERS, 300)
    # a 38x38 interior cell: its first prior is the 15 px square
    p = next(p for p in priors if p.layer == 0 and p.cell == (19, 19) and p.slot == 0)
    assert p.box.w * 300 == pytest.approx(15)
    small, large = mite_anchor_fit(priors, (15, 25), 300)
    assert small.size == 15 and small.best_iou == pytest.approx(1.0, abs=1e-12)
    assert small.best_layer == 0


def test_mite_fit_large_against_first_layer():
    layer0 = ssd_priors(VGG16_LAYERS[:1], 300, clip=False)
    (_, large) = mite_anchor_fit(layer0, (15, 25), 300)
    assert large.best_iou == pytest.approx((math.sqrt(15 * 30) / 25) ** 2, abs=1e-12)
    assert large.best_iou == pytest.approx(0.72, abs=1e-4)


def test_mite_fit_empty():
    assert mite_anchor_fit([], (15, 25), 300) == []
