"""Ground-truth matching, precision/recall/F1 and (m)AP.

Detections only ever match ground truth of the same image and class. Within
an image, detections are visited by confidence (ties broken by box
coordinates) and each takes the highest-IoU ground truth that is still free
and reaches the IoU threshold; on equal IoU the earlier ground truth wins.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import LabeledImage
from .decode import Detection
from .geometry import BoundingBox, iou_matrix

__all__ = [
    "GroundTruth",
    "MatchResult",
    "PRPoint",
    "ClassMetrics",
    "EvalReport",
    "IOU_THRESHOLDS",
    "match",
    "precision_recall",
    "f1",
    "pr_curve",
    "average_precision",
    "map_range",
    "evaluate",
    "ground_truth_from_images",
    "macro_mean",
]

#: 0.50, 0.55, ..., 0.95 as exact two-decimal literals.
IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AP_METHODS = ("all-points", "11-point")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    label: int
    box: BoundingBox


def ground_truth_from_images(images: Iterable[LabeledImage]) -> list[GroundTruth]:
    return [GroundTruth(img.image_id, a.label, a.box) for img in images for a in img.annotations]


@dataclass
class MatchResult:
    """Indices refer to the ``dets`` / ``gts`` sequences passed to :func:`match`."""

    tp: list[tuple[int, int]] = field(default_factory=list)  # (detection, ground truth)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.tp), len(self.fp), len(self.fn)


def _rank(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].box.as_tuple(), i))


def match(dets: Sequence[Detection], gts: Sequence[GroundTruth | BoundingBox], iou_threshold: float) -> MatchResult:
    """Greedy one-to-one matching of a single image's single-class detections."""
    gt_boxes = [g if isinstance(g, BoundingBox) else g.box for g in gts]
    result = MatchResult()
    if not dets:
        result.fn = list(range(len(gt_boxes)))
        return result
    order = _rank(dets)
    ious = iou_matrix([dets[i].box for i in order], gt_boxes)
    free = np.ones(len(gt_boxes), dtype=bool)
    for row, di in enumerate(order):
        best, best_iou = -1, -1.0
        for gi in range(len(gt_boxes)):
            v = ious[row, gi]
            if free[gi] and v >= iou_threshold and v > best_iou:
                best, best_iou = gi, v
        if best < 0:
            result.fp.append(di)
        else:
            free[best] = False
            result.tp.append((di, best))
    result.fn = [gi for gi in range(len(gt_boxes)) if free[gi]]
    return result


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """``TP / (TP + FP)`` and ``TP / (TP + FN)``; an empty denominator gives 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r


def f1(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


@dataclass(frozen=True)
class PRPoint:
    confidence: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


def _group(items, key):
    out: dict = {}
    for idx, item in enumerate(items):
        out.setdefault(key(item), []).append(idx)
    return out


def _ranked_outcomes(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float, n_jobs: int = 1
) -> tuple[list[tuple[float, str, tuple, bool]], int]:
    """``(score, image, box, is_tp)`` for every detection in global rank order, plus the GT count."""
    det_groups = _group(dets, lambda d: d.image_id)
    gt_groups = _group(gts, lambda g: g.image_id)

    def one(image_id):
        di = det_groups.get(image_id, [])
        gi = gt_groups.get(image_id, [])
        res = match([dets[i] for i in di], [gts[i].box for i in gi], iou_threshold)
        tp_local = {d for d, _ in res.tp}
        return [(dets[di[k]].score, image_id, dets[di[k]].box.as_tuple(), k in tp_local) for k in range(len(di))]

    images = sorted(det_groups)
    if n_jobs == 1:
        chunks = [one(i) for i in images]
    else:
        with ThreadPoolExecutor(max_workers=None if n_jobs < 1 else n_jobs) as pool:
            chunks = list(pool.map(one, images))
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    return rows, len(gts)


def pr_curve(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5, n_jobs: int = 1
) -> list[PRPoint]:
    """One point per detection in confidence order (single class, whole split)."""
    rows, npos = _ranked_outcomes(dets, gts, iou_threshold, n_jobs)
    points = []
    tp = fp = 0
    for score, _, _, hit in rows:
        tp += hit
        fp += not hit
        p, r = precision_recall(tp, fp, npos - tp)
        points.append(PRPoint(score, tp, fp, npos - tp, p, r))
    return points


def _ap_from_flags(flags: Sequence[bool], npos: int, method: str) -> float:
    if npos == 0:
        return float("nan")
    if len(flags) == 0:
        return 0.0
    hits = np.asarray(flags, dtype=np.float64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / npos
    precision = tp / (tp + fp)
    if method == "all-points":
        mrec = np.concatenate([[0.0], recall, [1.0]])
        mpre = np.concatenate([[0.0], precision, [0.0]])
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        step = np.nonzero(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))
    if method == "11-point":
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            above = precision[recall >= t]
            total += above.max() if above.size else 0.0
        return float(total / 11.0)
    raise ValueError(f"unknown AP method {method!r}; expected one of {AP_METHODS}")


def average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float = 0.5,
    method: str = "all-points",
    n_jobs: int = 1,
) -> float:
    """AP of one class over a whole split; NaN when there is no ground truth.

    ``all-points`` integrates the precision envelope (precision at recall
    ``r`` is the best precision at any recall ``>= r``) over recall;
    ``11-point`` averages the envelope at recall 0.0, 0.1, ..., 1.0.
    """
    rows, npos = _ranked_outcomes(dets, gts, iou_threshold, n_jobs)
    return _ap_from_flags([r[3] for r in rows], npos, method)


def macro_mean(values: Iterable[float]) -> float:
    """Unweighted mean ignoring NaN entries; NaN if nothing is left."""
    vals = [v for v in values if not np.isnan(v)]
    return float(sum(vals) / len(vals)) if vals else float("nan")


@dataclass(frozen=True)
class MapResult:
    map50: float
    map50_95: float
    ap: dict[int, dict[float, float]]


def _split_by_class(dets, gts, classes):
    if classes is None:
        classes = sorted({g.label for g in gts})
    d_by = {c: [d for d in dets if d.label == c] for c in classes}
    g_by = {c: [g for g in gts if g.label == c] for c in classes}
    return list(classes), d_by, g_by


def map_range(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    classes: Sequence[int] | None = None,
    method: str = "all-points",
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
    n_jobs: int = 1,
) -> MapResult:
    """mAP[0.5] and mAP[0.5:0.95] as unweighted means over classes (and thresholds).

    Classes default to those present in ``gts``; classes without ground truth
    are left out of the means.
    """
    classes, d_by, g_by = _split_by_class(dets, gts, classes)
    ap = {
        c: {t: average_precision(d_by[c], g_by[c], t, method, n_jobs) for t in iou_thresholds} for c in classes
    }
    map50 = macro_mean(ap[c][iou_thresholds[0]] for c in classes)
    map_all = macro_mean(macro_mean(ap[c].values()) for c in classes)
    return MapResult(map50, map_all, ap)


@dataclass(frozen=True)
class ClassMetrics:
    label: int
    name: str
    ap50: float
    ap50_95: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    num_gt: int
    num_det: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EvalReport:
    classes: tuple[ClassMetrics, ...]
    map50: float
    map50_95: float
    precision: float
    recall: float
    f1: float
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    ap_method: str = "all-points"

    @property
    def scored(self) -> tuple[ClassMetrics, ...]:
        """Classes with ground truth, i.e. those the averages run over."""
        return tuple(c for c in self.classes if c.num_gt > 0)

    def as_dict(self) -> dict:
        return {
            "classes": [c.as_dict() for c in self.classes],
            "average": {
                "map50": self.map50,
                "map50_95": self.map50_95,
                "f1": self.f1,
                "precision": self.precision,
                "recall": self.recall,
            },
            "iou_thresholds": list(self.iou_thresholds),
            "ap_method": self.ap_method,
        }


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    classes: Sequence[int] | None = None,
    class_names: Sequence[str] | Mapping[int, str] | None = None,
    method: str = "all-points",
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
    operating_iou: float = 0.5,
    score_threshold: float = 0.0,
    n_jobs: int = 1,
) -> EvalReport:
    """Full per-class evaluation.

    Precision, recall and F1 are taken at the operating point: detections
    with score at or above ``score_threshold`` matched at ``operating_iou``.
    Averages are unweighted means over classes that have ground truth.
    """
    classes, d_by, g_by = _split_by_class(dets, gts, classes)
    rows = []
    for c in classes:
        aps = [average_precision(d_by[c], g_by[c], t, method, n_jobs) for t in iou_thresholds]
        kept = [d for d in d_by[c] if d.score >= score_threshold]
        tp = fp = fn = 0
        det_groups = _group(kept, lambda d: d.image_id)
        gt_groups = _group(g_by[c], lambda g: g.image_id)
        for image_id in sorted(set(det_groups) | set(gt_groups)):
            res = match(
                [kept[i] for i in det_groups.get(image_id, [])],
                [g_by[c][i].box for i in gt_groups.get(image_id, [])],
                operating_iou,
            )
            a, b, d = res.counts
            tp, fp, fn = tp + a, fp + b, fn + d
        p, r = precision_recall(tp, fp, fn)
        if class_names is None:
            name = str(c)
        else:
            name = class_names[c]
        rows.append(
            ClassMetrics(
                c, name, aps[0], macro_mean(aps), p, r, f1(p, r), tp, fp, fn, len(g_by[c]), len(d_by[c])
            )
        )
    scored = [r for r in rows if r.num_gt > 0]
    return EvalReport(
        tuple(rows),
        macro_mean(r.ap50 for r in scored),
        macro_mean(r.ap50_95 for r in scored),
        macro_mean(r.precision for r in scored),
        macro_mean(r.recall for r in scored),
        macro_mean(r.f1 for r in scored),
        tuple(iou_thresholds),
        method,
    )
