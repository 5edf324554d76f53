"""scikit-learn style wrappers around the functional API.

The wrappers follow the usual estimator contract: constructor arguments are
stored untouched (so ``get_params``/``set_params``/``clone`` work), ``fit``
validates and learns state into trailing-underscore attributes, and
``transform``/``predict``/``score`` use that state.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import anchors as _anchors
from . import augment as _augment
from . import dataset as _dataset
from . import decode as _decode
from . import metrics as _metrics
from ._validation import check_images, check_is_fitted, check_seed, check_unit_interval
from .geometry import ImageDims

__all__ = [
    "VariantRemapper",
    "AugmentationPlanner",
    "PriorBoxGenerator",
    "YoloDecoder",
    "SsdDecoder",
    "DetectionEvaluator",
]


class VariantRemapper(TransformerMixin, BaseEstimator):
    """Map an all-classes :class:`~beedet.dataset.SplitDataset` (or image list) onto a variant."""

    def __init__(self, variant="healthy-ill"):
        self.variant = variant

    def fit(self, X=None, y=None):
        self.variant_ = _dataset.DatasetVariant.parse(self.variant)
        self.classes_ = np.arange(self.variant_.num_classes)
        self.class_names_ = self.variant_.class_names
        return self

    def transform(self, X):
        check_is_fitted(self, "variant_")
        if isinstance(X, _dataset.SplitDataset):
            return _dataset.remap(X, self.variant_)
        images = check_images(X)
        return _dataset.remap(_dataset.SplitDataset(train=images), self.variant_).train


class AugmentationPlanner(TransformerMixin, BaseEstimator):
    """Expand training images into augmentation plan entries."""

    def __init__(self, master_seed=0, retention=_augment.DEFAULT_RETENTION, styles=None, n_jobs=1):
        self.master_seed = master_seed
        self.retention = retention
        self.styles = styles
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.master_seed_ = check_seed(self.master_seed, "master_seed")
        self.retention_ = check_unit_interval(self.retention, "retention")
        self.styles_ = tuple(self.styles) if self.styles is not None else _augment.STYLES
        unknown = set(self.styles_) - set(_augment.STYLES)
        if unknown or not self.styles_:
            raise ValueError(f"unknown or empty style set: {sorted(unknown) or self.styles_}")
        return self

    def transform(self, X):
        check_is_fitted(self, "styles_")
        if isinstance(X, _dataset.SplitDataset):
            X = X.train
        return _augment.plan_expansion(
            check_images(X), self.master_seed_, self.retention_, self.styles_, n_jobs=self.n_jobs
        )


class PriorBoxGenerator(TransformerMixin, BaseEstimator):
    """Generate SSD priors; ``priors_`` holds a ``(P, 4)`` center-form array."""

    def __init__(self, layers=_anchors.VGG16_LAYERS, input_size=300, clip=True):
        self.layers = layers
        self.input_size = input_size
        self.clip = clip

    def fit(self, X=None, y=None):
        layers = list(self.layers)
        self.prior_boxes_ = _anchors.ssd_priors(layers, self.input_size, self.clip)
        self.priors_ = _anchors.priors_to_array(self.prior_boxes_)
        self.n_priors_ = len(self.priors_)
        return self

    def transform(self, X=None):
        check_is_fitted(self, "priors_")
        return self.priors_.copy()


class _Decoder(BaseEstimator):
    _arch = ""

    def _params(self):
        return _decode.DecodeParams(
            conf_threshold=check_unit_interval(self.conf_threshold, "conf_threshold"),
            nms_iou_threshold=check_unit_interval(self.nms_iou_threshold, "nms_iou_threshold", allow_none=True),
            **self._extra_params(),
        )

    def _extra_params(self):
        return {}

    def predict(self, X, dims: ImageDims | None = None) -> list[_decode.Detection]:
        """Decode one image's raw output (see the subclass for the expected ``X``)."""
        check_is_fitted(self, "params_")
        return self._decode(X, dims)

    def predict_many(self, batch, dims: ImageDims | None = None) -> list[_decode.Detection]:
        return _decode.sort_detections(d for X in batch for d in self.predict(X, dims))


class YoloDecoder(_Decoder):
    """Decode YOLO scale tensors. ``X`` is the sequence of three per-scale tensors."""

    def __init__(self, anchors=_anchors.DEFAULT_YOLO_ANCHORS, conf_threshold=0.4, nms_iou_threshold=0.45):
        self.anchors = anchors
        self.conf_threshold = conf_threshold
        self.nms_iou_threshold = nms_iou_threshold

    def fit(self, X=None, y=None):
        self.anchors.grid_sizes()
        self.params_ = self._params()
        return self

    def _decode(self, X, dims):
        return _decode.decode_yolo(X, self.anchors, self.params_, dims)


class SsdDecoder(_Decoder):
    """Decode SSD outputs. ``X`` is a ``(locations, scores)`` pair; ``fit`` builds the priors."""

    def __init__(
        self,
        layers=_anchors.VGG16_LAYERS,
        input_size=300,
        conf_threshold=0.3,
        nms_iou_threshold=0.45,
        center_variance=0.1,
        size_variance=0.2,
    ):
        self.layers = layers
        self.input_size = input_size
        self.conf_threshold = conf_threshold
        self.nms_iou_threshold = nms_iou_threshold
        self.center_variance = center_variance
        self.size_variance = size_variance

    def _extra_params(self):
        return {"center_variance": self.center_variance, "size_variance": self.size_variance}

    def fit(self, X=None, y=None):
        self.priors_ = _anchors.priors_to_array(_anchors.ssd_priors(list(self.layers), self.input_size))
        self.params_ = self._params()
        return self

    def _decode(self, X, dims):
        loc, scores = X
        dims = dims or ImageDims(self.input_size, self.input_size)
        return _decode.decode_ssd(loc, scores, self.priors_, self.params_, dims)


class DetectionEvaluator(BaseEstimator):
    """Hold ground truth from ``fit`` and score detections against it.

    ``score`` returns mAP[0.5] so the evaluator drops into model-selection
    loops; :meth:`evaluate` returns the full :class:`~beedet.metrics.EvalReport`.
    """

    def __init__(self, classes=None, ap_method="all-points", iou_thresholds=_metrics.IOU_THRESHOLDS,
                 score_threshold=0.0, n_jobs=1):
        self.classes = classes
        self.ap_method = ap_method
        self.iou_thresholds = iou_thresholds
        self.score_threshold = score_threshold
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        """``X`` is a list of :class:`LabeledImage` or of :class:`GroundTruth`."""
        X = list(X)
        if X and isinstance(X[0], _dataset.LabeledImage):
            self.ground_truth_ = _metrics.ground_truth_from_images(check_images(X))
        else:
            self.ground_truth_ = X
        if self.ap_method not in _metrics.AP_METHODS:
            raise ValueError(f"ap_method must be one of {_metrics.AP_METHODS}")
        self.classes_ = (
            list(self.classes) if self.classes is not None else sorted({g.label for g in self.ground_truth_})
        )
        return self

    def evaluate(self, detections: Sequence[_decode.Detection], class_names=None) -> _metrics.EvalReport:
        check_is_fitted(self, "ground_truth_")
        return _metrics.evaluate(
            detections,
            self.ground_truth_,
            self.classes_,
            class_names,
            self.ap_method,
            tuple(self.iou_thresholds),
            score_threshold=self.score_threshold,
            n_jobs=self.n_jobs,
        )

    def score(self, detections, y=None) -> float:
        check_is_fitted(self, "ground_truth_")
        return _metrics.map_range(
            detections, self.ground_truth_, self.classes_, self.ap_method, tuple(self.iou_thresholds), self.n_jobs
        ).map50
