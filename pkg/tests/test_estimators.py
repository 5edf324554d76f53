import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from beedet.anchors import DEFAULT_YOLO_ANCHORS, MOBILENET_V2_LAYERS, VGG16_LAYERS, priors_to_array, ssd_priors
from beedet.augment import plan_expansion
from beedet.dataset import DatasetVariant, SplitDataset, histogram, remap
from beedet.decode import DecodeParams, decode_ssd, decode_yolo
from beedet.estimators import (
    AugmentationPlanner,
    DetectionEvaluator,
    PriorBoxGenerator,
    SsdDecoder,
    VariantRemapper,
    YoloDecoder,
)
from beedet.geometry import ImageDims
from beedet.metrics import evaluate, ground_truth_from_images, map_range

from oracles import encode_ssd, encode_yolo
from synth import build_split


@pytest.mark.parametrize(
    "est",
    [VariantRemapper(), AugmentationPlanner(), PriorBoxGenerator(), YoloDecoder(), SsdDecoder(), DetectionEvaluator()],
)
def test_params_and_clone(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params().keys() == params.keys()
    assert type(twin) is type(est)


def test_unfitted_estimators_raise():
    with pytest.raises(NotFittedError):
        VariantRemapper().transform([])
    with pytest.raises(NotFittedError):
        YoloDecoder().predict([])
    with pytest.raises(NotFittedError):
        DetectionEvaluator().score([])


def test_remapper_matches_functional():
    ds = SplitDataset(train=build_split("t", 4, {1: 5, 5: 2, 6: 3}))
    est = VariantRemapper("bees-mites").fit()
    assert list(est.classes_) == [0, 1] and est.class_names_ == ("bees", "v-mite")
    out = est.transform(ds)
    assert histogram(out.train).counts == histogram(remap(ds, DatasetVariant.BEES_AND_MITES).train).counts
    assert est.transform(ds.train) == out.train


def test_planner_matches_functional_and_validates():
    imgs = build_split("p", 3, {1: 4, 6: 2})
    assert AugmentationPlanner(master_seed=5).fit_transform(imgs) == plan_expansion(imgs, 5)
    with pytest.raises(ValueError):
        AugmentationPlanner(retention=2.0).fit()
    with pytest.raises(ValueError):
        AugmentationPlanner(master_seed=-1).fit()
    with pytest.raises(ValueError):
        AugmentationPlanner(styles=["emboss"]).fit()


def test_prior_generator():
    est = PriorBoxGenerator().fit()
    assert est.n_priors_ == 8732
    assert np.array_equal(est.transform(None), priors_to_array(ssd_priors(VGG16_LAYERS, 300)))
    assert PriorBoxGenerator(MOBILENET_V2_LAYERS).fit().n_priors_ == len(ssd_priors(MOBILENET_V2_LAYERS, 300))


def test_yolo_decoder_matches_functional():
    raw = encode_yolo([((100, 120, 160, 200), 0, 0.9), ((400, 50, 430, 90), 1, 0.7)], DEFAULT_YOLO_ANCHORS, 2)
    est = YoloDecoder().fit()
    assert est.predict(raw) == decode_yolo(raw, DEFAULT_YOLO_ANCHORS, DecodeParams())
    assert len(est.predict_many([raw, raw])) == 4
    with pytest.raises(ValueError):
        YoloDecoder(conf_threshold=1.2).fit()


def test_ssd_decoder_matches_functional():
    priors = priors_to_array(ssd_priors(VGG16_LAYERS, 300))
    loc, scores = encode_ssd([((50, 60, 110, 140), 1, 0.8)], priors, 3, ImageDims(300, 300))
    est = SsdDecoder().fit()
    assert est.predict((loc, scores)) == decode_ssd(loc, scores, priors, DecodeParams(conf_threshold=0.3))


def test_evaluator_matches_functional():
    imgs = build_split("e", 3, {1: 3, 6: 2})
    gts = ground_truth_from_images(imgs)
    from beedet.decode import Detection

    dets = [Detection(g.image_id, g.label, g.box, 0.9) for g in gts[::2]]
    est = DetectionEvaluator().fit(imgs)
    assert est.evaluate(dets) == evaluate(dets, gts, est.classes_)
    assert est.score(dets) == map_range(dets, gts, est.classes_).map50
    assert DetectionEvaluator().fit(gts).score(dets) == est.score(dets)
    with pytest.raises(ValueError):
        DetectionEvaluator(ap_method="nope").fit(gts)
