"""Deterministic augmentation planning for the training split.

Every source image expands into 44 plan entries: for each of the four
quarter-turn rotations, the rotated original plus ten derivatives, each with
one style drawn uniformly from :data:`STYLES`. The planner only works on
annotations; a plan entry carries everything an image renderer needs
(rotation, style id, seed) and the already-transformed boxes.

Style parameters are a pure function of ``(style_id, seed, dims)`` via
:func:`style_params`, so a renderer reading the plan file can regenerate them.
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Annotation, LabeledImage, serialize_annotations
from .geometry import BoundingBox, ImageDims, clip_box, rotate_box

logger = logging.getLogger(__name__)

STYLES = (
    "gaussian-blur",
    "motion-blur",
    "additive-gaussian-noise",
    "salt-pepper",
    "hue-shift",
    "brightness-shift",
    "contrast-shift",
    "fog-overlay",
    "random-erase",
    "translate",
)
GEOMETRIC_STYLES = frozenset({"random-erase", "translate"})
ROTATIONS = (0, 1, 2, 3)
DERIVATIVES_PER_ROTATION = 10
ENTRIES_PER_IMAGE = len(ROTATIONS) * (1 + DERIVATIVES_PER_ROTATION)
DEFAULT_RETENTION = 0.3


@dataclass(frozen=True)
class AugStyle:
    style_id: str
    params: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def geometry_affecting(self) -> bool:
        return self.style_id in GEOMETRIC_STYLES


@dataclass(frozen=True)
class AugPlanEntry:
    output_id: str
    source_id: str
    quarter_turns: int
    derivative: int  # 0 for the unstyled rotation, 1..10 for styled ones
    style: AugStyle | None
    seed: int
    dims: ImageDims
    annotations: tuple[Annotation, ...] = ()

    @property
    def style_id(self) -> str:
        return self.style.style_id if self.style is not None else "orig"

    @property
    def source_dims(self) -> ImageDims:
        return self.dims.rotated(self.quarter_turns)


def entry_seed(master_seed: int, source_id: str, quarter_turns: int, derivative: int) -> int:
    """64-bit seed for one plan entry; independent of generation order."""
    key = f"{int(master_seed)}\x1f{source_id}\x1f{quarter_turns}\x1f{derivative}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def output_image_id(source_id: str, quarter_turns: int, style_id: str, derivative: int = 0) -> str:
    if derivative == 0:
        return f"{source_id}_r{90 * quarter_turns}_aorig"
    return f"{source_id}_r{90 * quarter_turns}_a{style_id}_{derivative:02d}"


def style_params(style_id: str, seed: int, dims: ImageDims) -> dict:
    """Parameters of ``style_id`` for a given entry seed and output frame.

    Ranges are configuration defaults. Geometric parameters are in integer
    pixels of the output frame.
    """
    rng = np.random.default_rng([seed, STYLES.index(style_id)])
    if style_id == "gaussian-blur":
        return {"sigma": float(rng.uniform(0.5, 2.0))}
    if style_id == "motion-blur":
        return {"kernel": int(rng.integers(3, 10)), "angle": float(rng.uniform(0.0, 360.0))}
    if style_id == "additive-gaussian-noise":
        return {"scale": float(rng.uniform(0.01, 0.08))}
    if style_id == "salt-pepper":
        return {"p": float(rng.uniform(0.005, 0.03))}
    if style_id == "hue-shift":
        return {"delta": int(rng.integers(-30, 31))}
    if style_id == "brightness-shift":
        return {"delta": float(rng.uniform(-0.25, 0.25))}
    if style_id == "contrast-shift":
        return {"factor": float(rng.uniform(0.6, 1.4))}
    if style_id == "fog-overlay":
        return {"density": float(rng.uniform(0.1, 0.5))}
    if style_id == "random-erase":
        area = rng.uniform(0.02, 0.2) * dims.width * dims.height
        aspect = np.exp(rng.uniform(np.log(0.3), np.log(1 / 0.3)))
        w = int(min(dims.width, max(1, round(np.sqrt(area * aspect)))))
        h = int(min(dims.height, max(1, round(np.sqrt(area / aspect)))))
        x = int(rng.integers(0, dims.width - w + 1))
        y = int(rng.integers(0, dims.height - h + 1))
        return {"x_min": x, "y_min": y, "x_max": x + w, "y_max": y + h}
    if style_id == "translate":
        dx = int(round(rng.uniform(-0.1, 0.1) * dims.width))
        dy = int(round(rng.uniform(-0.1, 0.1) * dims.height))
        return {"dx": dx, "dy": dy}
    raise ValueError(f"unknown augmentation style {style_id!r}")


def make_style(style_id: str, seed: int, dims: ImageDims) -> AugStyle:
    return AugStyle(style_id, style_params(style_id, seed, dims))


def _apply_style(box: BoundingBox, style: AugStyle | None, dims: ImageDims, retention: float) -> BoundingBox | None:
    if style is None or not style.geometry_affecting:
        return box
    area = box.area
    p = style.params
    if style.style_id == "translate":
        moved = clip_box(box.translated(p["dx"], p["dy"]), dims)
        return moved if moved.area >= retention * area and moved.area > 0 else None
    if style.style_id == "random-erase":
        # The erased patch hides part of the object; the box itself is unchanged.
        hole = BoundingBox(p["x_min"], p["y_min"], p["x_max"], p["y_max"])
        iw = max(0.0, min(box.x_max, hole.x_max) - max(box.x_min, hole.x_min))
        ih = max(0.0, min(box.y_max, hole.y_max) - max(box.y_min, hole.y_min))
        visible = area - iw * ih
        return box if visible >= retention * area and visible > 0 else None
    raise ValueError(f"no box transform for style {style.style_id!r}")


def transform_annotations(
    annotations: Iterable[Annotation],
    entry: AugPlanEntry,
    retention: float = DEFAULT_RETENTION,
) -> list[Annotation]:
    """Rotate annotations into ``entry``'s frame and apply its style's box transform.

    Boxes whose visible area drops below ``retention`` of their rotated area
    are removed.
    """
    src_dims = entry.source_dims
    rotated = [(a.label, *rotate_box(a.box, entry.quarter_turns, src_dims)) for a in annotations]
    return _styled([(label, box) for label, box, _ in rotated], entry.style, entry.dims, retention)


def _styled(rotated, style, dims, retention) -> list[Annotation]:
    out = []
    for label, box in rotated:
        box = _apply_style(box, style, dims, retention)
        if box is not None:
            out.append(Annotation(label, box))
    return out


def _plan_one(img: LabeledImage, master_seed: int, retention: float, styles: Sequence[str]) -> list[AugPlanEntry]:
    entries = []
    for k in ROTATIONS:
        dims = img.dims.rotated(k)
        rotated = [(a.label, rotate_box(a.box, k, img.dims)[0]) for a in img.annotations]
        plain = tuple(Annotation(label, box) for label, box in rotated)
        for d in range(DERIVATIVES_PER_ROTATION + 1):
            seed = entry_seed(master_seed, img.image_id, k, d)
            if d == 0:
                style = None
                out_id = output_image_id(img.image_id, k, "orig")
            else:
                # the entry seed is a uniform 64-bit hash, so its residue picks the style
                style_id = styles[seed % len(styles)]
                style = make_style(style_id, seed, dims)
                out_id = output_image_id(img.image_id, k, style_id, d)
            if style is None or not style.geometry_affecting:
                anns = plain
            else:
                anns = tuple(_styled(rotated, style, dims, retention))
            entries.append(AugPlanEntry(out_id, img.image_id, k, d, style, seed, dims, anns))
    return entries


def plan_expansion(
    train: Sequence[LabeledImage],
    master_seed: int,
    retention: float = DEFAULT_RETENTION,
    styles: Sequence[str] = STYLES,
    split: str = "train",
    n_jobs: int = 1,
) -> list[AugPlanEntry]:
    """Expand a training split into 44 plan entries per image, sorted by output id.

    Raises:
        ValueError: if ``split`` is not ``"train"``, ``train`` is empty, or a
            style is unknown.
    """
    if split != "train":
        raise ValueError(f"only the training split is augmented, got {split!r}")
    if not train:
        raise ValueError("cannot plan augmentation for an empty split")
    if not 0.0 <= retention <= 1.0:
        raise ValueError(f"retention must be in [0, 1], got {retention}")
    unknown = [s for s in styles if s not in STYLES]
    if unknown or not styles:
        raise ValueError(f"unknown or empty style set: {unknown or styles}")
    styles = tuple(styles)
    if n_jobs == 1:
        chunks = [_plan_one(img, master_seed, retention, styles) for img in train]
    else:
        with ThreadPoolExecutor(max_workers=None if n_jobs < 1 else n_jobs) as pool:
            chunks = list(pool.map(lambda img: _plan_one(img, master_seed, retention, styles), train))
    plan = [e for chunk in chunks for e in chunk]
    plan.sort(key=lambda e: e.output_id)
    logger.debug("planned %d entries for %d images", len(plan), len(train))
    return plan


def plan_histogram(plan: Iterable[AugPlanEntry]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for entry in plan:
        for ann in entry.annotations:
            counts[ann.label] = counts.get(ann.label, 0) + 1
    return dict(sorted(counts.items()))


def format_plan_line(entry: AugPlanEntry, annotation_path: str) -> str:
    fields = [
        entry.output_id,
        entry.source_id,
        str(entry.quarter_turns),
        entry.style_id,
        str(entry.seed),
        str(entry.dims.width),
        str(entry.dims.height),
        annotation_path,
    ]
    return "\t".join(fields)


def write_plan(plan: Sequence[AugPlanEntry], out_dir: str | Path) -> Path:
    """Write ``plan.tsv`` and one annotation file per entry under ``labels/``."""
    out_dir = Path(out_dir)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    lines = []
    for entry in plan:
        rel = f"labels/{entry.output_id}.txt"
        (out_dir / rel).write_text(serialize_annotations(entry.annotations, entry.dims), encoding="utf-8")
        lines.append(format_plan_line(entry, rel) + "\n")
    path = out_dir / "plan.tsv"
    path.write_text("".join(lines), encoding="utf-8")
    return path


def read_plan(path: str | Path) -> list[dict]:
    """Parse ``plan.tsv`` into plain records (annotations are left on disk)."""
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 tab-separated fields, got {len(parts)}")
        out_id, source, k, style_id, seed, w, h, rel = parts
        records.append(
            {
                "output_id": out_id,
                "source_id": source,
                "quarter_turns": int(k),
                "style_id": style_id,
                "seed": int(seed),
                "dims": ImageDims(int(w), int(h)),
                "annotation_path": rel,
            }
        )
    return records
