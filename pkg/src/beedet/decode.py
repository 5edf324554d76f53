"""Raw detector tensors to thresholded, suppressed pixel-space detections.

YOLO tensors are ``(anchors, S, S, N + 5)`` per scale with channels
``tx, ty, tw, th, objectness, class_0 .. class_{N-1}`` (all logits). SSD
outputs are a ``(P, 4)`` location tensor and a ``(P, N + 1)`` score tensor
whose column 0 is the background class.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .anchors import PriorBox, YoloAnchorConfig, priors_to_array, yolo_grid_shapes
from .geometry import BoundingBox, ImageDims, iou_matrix

__all__ = [
    "RawTensor",
    "Detection",
    "DecodeParams",
    "DecodeError",
    "read_raw",
    "write_raw",
    "decode_yolo",
    "decode_ssd",
    "nms",
    "batched_nms",
    "sort_detections",
    "write_detections",
    "read_detections",
]

MAGIC = b"RTEN"
YOLO_LAYOUT = "A,H,W,C"
SSD_LOC_LAYOUT = "P,4"
SSD_SCORE_LAYOUT = "P,C"


class DecodeError(ValueError):
    """Raw tensors do not match the expected geometry or contain bad values."""


@dataclass
class RawTensor:
    values: np.ndarray
    layout: str = ""
    image_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.values.shape)


def write_raw(tensor: RawTensor, fp: IO[bytes] | str | Path) -> None:
    header = json.dumps(
        {"dtype": "f32le", "dims": list(tensor.dims), "layout": tensor.layout, "image_id": tensor.image_id},
        separators=(",", ":"),
    ).encode("utf-8")
    payload = np.ascontiguousarray(tensor.values, dtype="<f4").tobytes()
    blob = MAGIC + struct.pack("<I", len(header)) + header + payload
    if isinstance(fp, (str, Path)):
        Path(fp).write_bytes(blob)
    else:
        fp.write(blob)


def read_raw(fp: IO[bytes] | str | Path | bytes) -> RawTensor:
    if isinstance(fp, (str, Path)):
        blob = Path(fp).read_bytes()
    elif isinstance(fp, bytes):
        blob = fp
    else:
        blob = fp.read()
    if blob[:4] != MAGIC:
        raise DecodeError("not a raw tensor container (bad magic)")
    if len(blob) < 8:
        raise DecodeError("truncated header")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"unreadable header: {exc}") from None
    if header.get("dtype") != "f32le":
        raise DecodeError(f"unsupported dtype {header.get('dtype')!r}")
    dims = [int(d) for d in header.get("dims", [])]
    if not dims or any(d < 1 for d in dims):
        raise DecodeError(f"bad dims {dims}")
    count = int(np.prod(dims))
    payload = blob[8 + hlen :]
    if len(payload) != 4 * count:
        raise DecodeError(f"payload holds {len(payload) // 4} values, dims need {count}")
    values = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return RawTensor(values, header.get("layout", ""), header.get("image_id", ""))


@dataclass(frozen=True)
class Detection:
    image_id: str
    label: int
    box: BoundingBox
    score: float

    def sort_key(self):
        return (-self.score, self.box.as_tuple(), self.label, self.image_id)

    def to_json(self) -> str:
        return json.dumps(
            {"image": self.image_id, "class": self.label, "bbox": list(self.box.as_tuple()), "score": self.score}
        )

    @classmethod
    def from_record(cls, rec: dict) -> "Detection":
        return cls(str(rec["image"]), int(rec["class"]), BoundingBox(*rec["bbox"]), float(rec["score"]))


@dataclass(frozen=True)
class DecodeParams:
    conf_threshold: float = 0.4
    nms_iou_threshold: float | None = 0.45
    center_variance: float = 0.1
    size_variance: float = 0.2
    yolo_convention: str = "v5"

    def __post_init__(self):
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError(f"conf_threshold must be in [0, 1], got {self.conf_threshold}")
        if self.nms_iou_threshold is not None and not 0.0 <= self.nms_iou_threshold <= 1.0:
            raise ValueError(f"nms_iou_threshold must be in [0, 1], got {self.nms_iou_threshold}")
        if self.yolo_convention != "v5":
            raise ValueError(f"unsupported YOLO convention {self.yolo_convention!r}")

    @classmethod
    def for_arch(cls, arch: str, **overrides) -> "DecodeParams":
        defaults = {"yolo": 0.4, "ssd": 0.3}
        if arch not in defaults:
            raise ValueError(f"unknown architecture {arch!r}")
        overrides.setdefault("conf_threshold", defaults[arch])
        return cls(**overrides)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_array(t) -> tuple[np.ndarray, str]:
    if isinstance(t, RawTensor):
        return t.values.astype(np.float64), t.image_id
    return np.asarray(t, dtype=np.float64), ""


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DecodeError(f"{what} contains non-finite values")


def _corner_boxes(cx, cy, w, h, dims: ImageDims) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)
    boxes = np.nan_to_num(boxes, nan=0.0, posinf=np.inf, neginf=-np.inf)
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, dims.width)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, dims.height)
    return boxes


def _finish(boxes, labels, scores, image_id, params: DecodeParams) -> list[Detection]:
    dets = [
        Detection(image_id, int(c), BoundingBox(*b), float(s)) for b, c, s in zip(boxes.tolist(), labels, scores)
    ]
    if params.nms_iou_threshold is not None:
        dets = batched_nms(dets, params.nms_iou_threshold)
    return sort_detections(dets)


def decode_yolo(
    raw: Sequence[RawTensor | np.ndarray],
    cfg: YoloAnchorConfig,
    params: DecodeParams = DecodeParams(),
    dims: ImageDims | None = None,
    image_id: str | None = None,
) -> list[Detection]:
    """Decode the three YOLO scale tensors of one image.

    Per cell ``(i, j)`` and anchor ``(aw, ah)`` of a scale with stride ``s``::

        cx = (j + 2 * sigmoid(tx) - 0.5) * s      w = aw * (2 * sigmoid(tw)) ** 2
        cy = (i + 2 * sigmoid(ty) - 0.5) * s      h = ah * (2 * sigmoid(th)) ** 2
        confidence = sigmoid(obj) * max_c sigmoid(class_c)

    Tensors may be given in any scale order; each is matched to its scale by
    grid size. Boxes are clipped to ``dims`` (default: the square network frame).
    """
    dims = dims or ImageDims(cfg.input_size, cfg.input_size)
    arrays = [_as_array(t) for t in raw]
    if len(arrays) != len(cfg.scales):
        raise DecodeError(f"expected {len(cfg.scales)} scale tensors, got {len(arrays)}")
    if image_id is None:
        image_id = next((iid for _, iid in arrays if iid), "")
    channels = arrays[0][0].shape[-1] if arrays[0][0].ndim == 4 else 0
    if channels < 6:
        raise DecodeError(f"YOLO tensors need at least 6 channels, got shape {arrays[0][0].shape}")
    expected = yolo_grid_shapes(cfg, channels - 5)
    by_grid = {shape[1]: (scale, shape) for scale, shape in zip(cfg.scales, expected)}
    seen = set()
    all_boxes, all_labels, all_scores = [], [], []
    for arr, _ in arrays:
        grid = arr.shape[1] if arr.ndim == 4 else None
        if grid not in by_grid or grid in seen or arr.shape != by_grid[grid][1]:
            raise DecodeError(f"tensor shape {arr.shape} does not match expected shapes {expected}")
        seen.add(grid)
        _check_finite(arr, "YOLO tensor")
        scale, _ = by_grid[grid]
        if params.conf_threshold >= 1.0:
            continue  # sigmoid < 1 for every finite logit
        sig = _sigmoid(arr)
        cls_prob = sig[..., 5:]
        labels = cls_prob.argmax(axis=-1)
        conf = sig[..., 4] * cls_prob.max(axis=-1)
        keep = conf >= params.conf_threshold
        if not keep.any():
            continue
        a_idx, i_idx, j_idx = np.nonzero(keep)
        anchors = np.asarray(scale.anchors, dtype=np.float64)
        s = sig[a_idx, i_idx, j_idx]
        cx = (j_idx + 2.0 * s[:, 0] - 0.5) * scale.stride
        cy = (i_idx + 2.0 * s[:, 1] - 0.5) * scale.stride
        w = anchors[a_idx, 0] * (2.0 * s[:, 2]) ** 2
        h = anchors[a_idx, 1] * (2.0 * s[:, 3]) ** 2
        all_boxes.append(_corner_boxes(cx, cy, w, h, dims))
        all_labels.append(labels[a_idx, i_idx, j_idx])
        all_scores.append(conf[a_idx, i_idx, j_idx])
    if not all_boxes:
        return []
    return _finish(np.concatenate(all_boxes), np.concatenate(all_labels), np.concatenate(all_scores), image_id, params)


def decode_ssd(
    locations: RawTensor | np.ndarray,
    scores: RawTensor | np.ndarray,
    priors: Sequence[PriorBox] | np.ndarray,
    params: DecodeParams = DecodeParams(conf_threshold=0.3),
    dims: ImageDims = ImageDims(300, 300),
    image_id: str | None = None,
) -> list[Detection]:
    """Decode SSD regressions against their priors.

    ``cx = pcx + l0 * vc * pw``, ``w = pw * exp(l2 * vs)`` (y/h alike), class
    probabilities by softmax over ``N + 1`` logits with background at index 0.
    Every (prior, class) pair whose probability reaches the threshold becomes
    a candidate; output class ids are 0-based without the background.
    """
    loc, loc_id = _as_array(locations)
    conf, conf_id = _as_array(scores)
    pri = priors if isinstance(priors, np.ndarray) else priors_to_array(priors)
    if image_id is None:
        image_id = loc_id or conf_id
    n = len(pri)
    if loc.shape != (n, 4):
        raise DecodeError(f"location tensor shape {loc.shape}, expected ({n}, 4)")
    if conf.ndim != 2 or conf.shape[0] != n or conf.shape[1] < 2:
        raise DecodeError(f"score tensor shape {conf.shape}, expected ({n}, N+1)")
    _check_finite(loc, "SSD location tensor")
    _check_finite(conf, "SSD score tensor")
    if params.conf_threshold >= 1.0 or n == 0:
        return []
    probs = _softmax(conf)[:, 1:]
    prior_idx, labels = np.nonzero(probs >= params.conf_threshold)
    if len(prior_idx) == 0:
        return []
    p = pri[prior_idx]
    l = loc[prior_idx]
    vc, vs = params.center_variance, params.size_variance
    with np.errstate(over="ignore"):
        cx = (p[:, 0] + l[:, 0] * vc * p[:, 2]) * dims.width
        cy = (p[:, 1] + l[:, 1] * vc * p[:, 3]) * dims.height
        w = p[:, 2] * np.exp(l[:, 2] * vs) * dims.width
        h = p[:, 3] * np.exp(l[:, 3] * vs) * dims.height
    boxes = _corner_boxes(cx, cy, w, h, dims)
    return _finish(boxes, labels, probs[prior_idx, labels], image_id, params)


def sort_detections(dets: Iterable[Detection]) -> list[Detection]:
    """Confidence descending, then box lexicographic."""
    return sorted(dets, key=Detection.sort_key)


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression for detections of one image and class.

    Candidates are visited by confidence (ties: smaller ``x_min``, then
    ``y_min``); each kept box removes every later box with IoU at or above
    ``iou_threshold``.
    """
    if len(dets) <= 1:
        return list(dets)
    order = sorted(dets, key=lambda d: (-d.score, d.box.as_tuple()))
    boxes = np.array([d.box.as_tuple() for d in order])
    ious = iou_matrix(boxes, boxes)
    alive = np.ones(len(order), dtype=bool)
    kept = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(order[i])
        alive[i + 1 :] &= ious[i, i + 1 :] < iou_threshold
    return kept


def batched_nms(dets: Iterable[Detection], iou_threshold: float) -> list[Detection]:
    """Apply :func:`nms` independently per ``(image, class)`` group."""
    groups: dict[tuple[str, int], list[Detection]] = {}
    for d in dets:
        groups.setdefault((d.image_id, d.label), []).append(d)
    out = []
    for key in sorted(groups):
        out.extend(nms(groups[key], iou_threshold))
    return out


def write_detections(dets: Iterable[Detection], fp: IO[str] | str | Path) -> None:
    text = "".join(d.to_json() + "\n" for d in dets)
    if isinstance(fp, (str, Path)):
        Path(fp).write_text(text, encoding="utf-8")
    else:
        fp.write(text)


def read_detections(fp: IO[str] | str | Path) -> list[Detection]:
    if isinstance(fp, (str, Path)):
        fp = io.StringIO(Path(fp).read_text(encoding="utf-8"))
    out = []
    for lineno, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        try:
            out.append(Detection.from_record(json.loads(line)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DecodeError(f"detections line {lineno}: {exc}") from None
    return out
