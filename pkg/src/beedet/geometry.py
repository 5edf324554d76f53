"""Axis-aligned box primitives.

All coordinates are continuous pixel positions with the origin at the top-left
corner, x growing rightwards and y growing downwards. A box ``(0, 0, 10, 10)``
covers exactly 100 square pixels; there is no ``+1`` convention anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BoundingBox",
    "NormCenterBox",
    "ImageDims",
    "OutOfBoundsError",
    "iou",
    "iou_matrix",
    "rotate_box",
    "rotate_dims",
    "to_normalized",
    "from_normalized",
    "clip_box",
    "boxes_to_array",
]

# Slack for float noise when checking that a box lies inside an image.
BOUNDS_EPS = 1e-6


class OutOfBoundsError(ValueError):
    """A box does not lie within the image it is attached to."""


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        for name in ("width", "height"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"image {name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    def rotated(self, quarter_turns: int) -> "ImageDims":
        return rotate_dims(self, quarter_turns)


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Corner-form box ``(x_min, y_min, x_max, y_max)`` in pixels.

    Ordering is lexicographic over the four coordinates, which is the
    tie-break used when sorting detections.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        values = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(v) for v in values):
            raise ValueError(f"box coordinates must be finite, got {values}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"box corners are inverted: {values}")
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), values):
            object.__setattr__(self, name, float(v))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def within(self, dims: ImageDims, eps: float = BOUNDS_EPS) -> bool:
        return (
            self.x_min >= -eps
            and self.y_min >= -eps
            and self.x_max <= dims.width + eps
            and self.y_max <= dims.height + eps
        )

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


@dataclass(frozen=True)
class NormCenterBox:
    """Center-form box with every field expressed as a fraction of the image size."""

    cx: float
    cy: float
    w: float
    h: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def to_corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def boxes_to_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a: Sequence[BoundingBox] | np.ndarray, b: Sequence[BoundingBox] | np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``.

    Accepts either box sequences or ``(n, 4)`` corner arrays. Agrees with
    :func:`iou` element-wise.
    """
    a = a if isinstance(a, np.ndarray) else boxes_to_array(a)
    b = b if isinstance(b, np.ndarray) else boxes_to_array(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.minimum(out, 1.0)


def rotate_dims(dims: ImageDims, quarter_turns: int) -> ImageDims:
    if quarter_turns % 2:
        return ImageDims(dims.height, dims.width)
    return dims


def rotate_box(b: BoundingBox, quarter_turns: int, dims: ImageDims) -> tuple[BoundingBox, ImageDims]:
    """Rotate ``b`` together with its image by ``quarter_turns`` x 90 degrees clockwise.

    A single clockwise turn maps a point ``(x, y)`` of a ``W x H`` image to
    ``(H - y, x)`` in the resulting ``H x W`` image. Quarter turns keep boxes
    axis-aligned, so the result is exact.

    Returns:
        The rotated box and the rotated image dimensions.

    Raises:
        OutOfBoundsError: if ``b`` does not lie inside ``dims``.
    """
    if quarter_turns not in (0, 1, 2, 3):
        raise ValueError(f"quarter_turns must be 0..3, got {quarter_turns!r}")
    if not b.within(dims):
        raise OutOfBoundsError(f"{b} lies outside a {dims.width}x{dims.height} image")
    W, H = dims.width, dims.height
    x0, y0, x1, y1 = b.as_tuple()
    if quarter_turns == 0:
        return b, dims
    if quarter_turns == 1:
        return BoundingBox(H - y1, x0, H - y0, x1), ImageDims(H, W)
    if quarter_turns == 2:
        return BoundingBox(W - x1, H - y1, W - x0, H - y0), dims
    return BoundingBox(y0, W - x1, y1, W - x0), ImageDims(H, W)


def to_normalized(b: BoundingBox, dims: ImageDims) -> NormCenterBox:
    if dims.width <= 0 or dims.height <= 0:
        raise ValueError("image dimensions must be positive")
    cx, cy = b.center
    return NormCenterBox(cx / dims.width, cy / dims.height, b.width / dims.width, b.height / dims.height)


def from_normalized(n: NormCenterBox, dims: ImageDims) -> BoundingBox:
    W, H = dims.width, dims.height
    cx, cy, w, h = n.cx * W, n.cy * H, n.w * W, n.h * H
    return BoundingBox(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def clip_box(b: BoundingBox, dims: ImageDims) -> BoundingBox:
    """Clamp ``b`` to the image frame. Fully outside boxes collapse to zero area."""
    x0 = min(max(b.x_min, 0.0), dims.width)
    y0 = min(max(b.y_min, 0.0), dims.height)
    x1 = min(max(b.x_max, 0.0), dims.width)
    y1 = min(max(b.y_max, 0.0), dims.height)
    return BoundingBox(x0, y0, max(x0, x1), max(y0, y1))
