"""YOLO anchor grids and SSD prior boxes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import NormCenterBox

__all__ = [
    "ConfigError",
    "YoloScale",
    "YoloAnchorConfig",
    "SsdLayerConfig",
    "PriorBox",
    "DEFAULT_YOLO_ANCHORS",
    "VGG16_LAYERS",
    "MOBILENET_V2_LAYERS",
    "yolo_grid_shapes",
    "yolo_num_predictions",
    "ssd_priors",
    "priors_to_array",
    "expected_prior_count",
    "mite_anchor_fit",
    "parse_layer_config",
    "format_layer_config",
    "parse_anchor_config",
]


class ConfigError(ValueError):
    """Inconsistent anchor or prior configuration."""


@dataclass(frozen=True)
class YoloScale:
    stride: int
    anchors: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class YoloAnchorConfig:
    input_size: int = 640
    scales: tuple[YoloScale, ...] = (
        YoloScale(8, ((10, 13), (16, 30), (33, 23))),
        YoloScale(16, ((30, 61), (62, 45), (59, 119))),
        YoloScale(32, ((116, 90), (156, 198), (373, 326))),
    )

    def grid_sizes(self) -> list[int]:
        sizes = []
        for scale in self.scales:
            if self.input_size % scale.stride:
                raise ConfigError(f"input size {self.input_size} is not divisible by stride {scale.stride}")
            sizes.append(self.input_size // scale.stride)
        return sizes

    def with_input_size(self, input_size: int) -> "YoloAnchorConfig":
        return YoloAnchorConfig(input_size, self.scales)


DEFAULT_YOLO_ANCHORS = YoloAnchorConfig()


def yolo_grid_shapes(cfg: YoloAnchorConfig, num_classes: int) -> list[tuple[int, int, int, int]]:
    """Output tensor shape ``(anchors, S, S, N + 5)`` per scale, finest first."""
    if num_classes < 1:
        raise ConfigError("num_classes must be positive")
    return [(len(s.anchors), g, g, num_classes + 5) for s, g in zip(cfg.scales, cfg.grid_sizes())]


def yolo_num_predictions(cfg: YoloAnchorConfig) -> int:
    return sum(len(s.anchors) * g * g for s, g in zip(cfg.scales, cfg.grid_sizes()))


@dataclass(frozen=True)
class SsdLayerConfig:
    """One SSD feature layer.

    ``aspect_ratios`` follows the table convention where ``1`` stands for the
    two square priors; every ratio ``r > 1`` adds a ``(r, 1/r)`` pair.
    ``shrinkage`` is kept as metadata only: cell centers are placed at
    ``(index + 0.5) / feature_map_size``.
    """

    feature_map_size: int
    shrinkage: float
    box_min: float
    box_max: float
    aspect_ratios: tuple[float, ...] = (1, 2)
    boxes_per_cell: int = 4

    def __post_init__(self):
        object.__setattr__(self, "aspect_ratios", tuple(self.aspect_ratios))
        if self.feature_map_size < 1:
            raise ConfigError("feature_map_size must be positive")
        if not 0 < self.box_min < self.box_max:
            raise ConfigError(f"need 0 < box_min < box_max, got ({self.box_min}, {self.box_max})")
        if self.boxes_per_cell not in (4, 6):
            raise ConfigError(f"boxes_per_cell must be 4 or 6, got {self.boxes_per_cell}")
        implied = 2 + 2 * len(self.extra_ratios)
        if implied != self.boxes_per_cell:
            raise ConfigError(
                f"aspect ratios {list(self.aspect_ratios)} give {implied} boxes per cell, "
                f"configured {self.boxes_per_cell}"
            )

    @property
    def extra_ratios(self) -> tuple[float, ...]:
        return tuple(sorted(r for r in self.aspect_ratios if r > 1))


def _layers(rows, per_cell):
    out = []
    for (fm, shrink, lo, hi), n in zip(rows, per_cell):
        ratios = (1, 2) if n == 4 else (1, 2, 3)
        out.append(SsdLayerConfig(fm, shrink, lo, hi, ratios, n))
    return tuple(out)


VGG16_LAYERS = _layers(
    [(38, 16, 15, 30), (19, 32, 30, 60), (10, 64, 60, 105), (5, 100, 105, 150), (3, 150, 150, 195), (1, 300, 195, 240)],
    (4, 6, 6, 6, 4, 4),
)
MOBILENET_V2_LAYERS = _layers(
    [(19, 16, 15, 30), (10, 32, 30, 60), (5, 64, 60, 105), (3, 100, 105, 150), (2, 150, 150, 195), (1, 300, 195, 240)],
    (6, 6, 6, 6, 6, 6),
)


@dataclass(frozen=True)
class PriorBox:
    box: NormCenterBox
    layer: int
    cell: tuple[int, int]  # (row, col)
    slot: int


def expected_prior_count(layers: Sequence[SsdLayerConfig]) -> int:
    return sum(layer.feature_map_size**2 * layer.boxes_per_cell for layer in layers)


def _clip_center(cx, cy, w, h):
    if cx - w / 2 >= 0.0 and cy - h / 2 >= 0.0 and cx + w / 2 <= 1.0 and cy + h / 2 <= 1.0:
        return (cx, cy, w, h)
    x0, y0 = max(cx - w / 2, 0.0), max(cy - h / 2, 0.0)
    x1, y1 = min(cx + w / 2, 1.0), min(cy + h / 2, 1.0)
    return ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def ssd_priors(layers: Sequence[SsdLayerConfig], input_size: int, clip: bool = True) -> list[PriorBox]:
    """Generate priors layer-major, row-major, then slot order.

    Slots per cell: the ``box_min`` square, the ``sqrt(box_min * box_max)``
    square, then for each ratio ``r > 1`` ascending the pair
    ``(s * sqrt(r), s / sqrt(r))`` and ``(s / sqrt(r), s * sqrt(r))`` with
    ``s = box_min / input_size``. With ``clip`` the prior is intersected with
    the unit frame.
    """
    if input_size <= 0:
        raise ConfigError("input_size must be positive")
    priors = []
    for li, layer in enumerate(layers):
        fm = layer.feature_map_size
        small = layer.box_min / input_size
        big = math.sqrt(layer.box_min * layer.box_max) / input_size
        shapes = [(small, small), (big, big)]
        for r in layer.extra_ratios:
            sr = math.sqrt(r)
            shapes.append((small * sr, small / sr))
            shapes.append((small / sr, small * sr))
        for i in range(fm):
            cy = (i + 0.5) / fm
            for j in range(fm):
                cx = (j + 0.5) / fm
                for slot, (w, h) in enumerate(shapes):
                    values = _clip_center(cx, cy, w, h) if clip else (cx, cy, w, h)
                    priors.append(PriorBox(NormCenterBox(*values), li, (i, j), slot))
    return priors


def priors_to_array(priors: Sequence[PriorBox]) -> np.ndarray:
    """``(P, 4)`` array of ``cx, cy, w, h``."""
    return np.array([p.box.as_tuple() for p in priors], dtype=np.float64).reshape(-1, 4)


@dataclass
class MiteFit:
    size: float
    best_iou: float
    best_layer: int | None
    per_layer: dict[int, float] = field(default_factory=dict)


def mite_anchor_fit(
    priors: Sequence[PriorBox],
    mite_size_range: tuple[float, float] = (15, 25),
    input_size: int = 300,
) -> list[MiteFit]:
    """Best IoU any prior can reach against square mites of the extreme sizes.

    A mite of side ``s`` is placed concentric with each prior, which is the
    IoU-maximizing placement for two axis-aligned boxes. Returns one entry per
    extreme size, or nothing for an empty prior set.
    """
    if not priors:
        return []
    arr = priors_to_array(priors) * input_size
    layers = np.array([p.layer for p in priors])
    report = []
    for s in mite_size_range:
        inter = np.minimum(arr[:, 2], s) * np.minimum(arr[:, 3], s)
        ious = inter / (arr[:, 2] * arr[:, 3] + s * s - inter)
        per_layer = {int(li): float(ious[layers == li].max()) for li in np.unique(layers)}
        best = int(np.argmax(ious))
        report.append(MiteFit(float(s), float(ious[best]), int(layers[best]), per_layer))
    return report


# ---------------------------------------------------------------------------
# config files


def _parse_ratios(text: str) -> tuple[float, ...]:
    text = text.strip().strip("[]")
    return tuple(float(t) if "." in t else int(t) for t in text.replace(";", ",").split(",") if t)


def parse_layer_config(text: str) -> list[SsdLayerConfig]:
    """Parse ``fm shrinkage min max ratios per_cell`` rows; ``#`` starts a comment."""
    layers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ConfigError(f"line {lineno}: expected 6 fields (fm shrinkage min max ratios per_cell)")
        try:
            fm, shrink, lo, hi = int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])
            ratios = _parse_ratios(parts[4])
            per_cell = int(parts[5])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        try:
            layers.append(SsdLayerConfig(fm, shrink, lo, hi, ratios, per_cell))
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return layers


def format_layer_config(layers: Sequence[SsdLayerConfig]) -> str:
    def num(v):
        return str(int(v)) if float(v).is_integer() else repr(float(v))

    lines = ["# fm shrinkage min max ratios per_cell"]
    for layer in layers:
        ratios = ",".join(num(r) for r in layer.aspect_ratios)
        lines.append(
            f"{layer.feature_map_size} {num(layer.shrinkage)} {num(layer.box_min)} {num(layer.box_max)} "
            f"{ratios} {layer.boxes_per_cell}"
        )
    return "\n".join(lines) + "\n"


def parse_anchor_config(text: str, input_size: int | None = None) -> YoloAnchorConfig:
    """Parse YOLO anchors: ``stride w,h w,h w,h`` rows and an optional ``input_size N`` row."""
    scales = []
    size = input_size
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "input_size":
            if size is None:
                size = int(parts[1])
            continue
        try:
            stride = int(parts[0])
            pairs = tuple(tuple(float(v) for v in p.split(",")) for p in parts[1:])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        if not pairs or any(len(p) != 2 for p in pairs):
            raise ConfigError(f"line {lineno}: anchors must be w,h pairs")
        scales.append(YoloScale(stride, pairs))
    cfg = YoloAnchorConfig(size or 640, tuple(scales) if scales else DEFAULT_YOLO_ANCHORS.scales)
    cfg.grid_sizes()
    return cfg


def load_layer_config(path: str | Path) -> list[SsdLayerConfig]:
    return parse_layer_config(Path(path).read_text(encoding="utf-8"))
