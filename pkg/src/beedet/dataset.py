"""Annotation parsing, class remapping and dataset bookkeeping.

On-disk layout:

* one annotation file per image, lines ``class_id cx cy w h`` with a 0-based
  class id followed by four normalized center-form floats;
* a dataset index, lines ``image_id width height split relative_annotation_path``.

File class ids 0..5 correspond to :class:`BeeClass` values 1..6.
"""
from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geometry import BOUNDS_EPS, BoundingBox, ImageDims, NormCenterBox, from_normalized, to_normalized

logger = logging.getLogger(__name__)

__all__ = [
    "BeeClass",
    "DatasetVariant",
    "Annotation",
    "LabeledImage",
    "SplitDataset",
    "ClassHistogram",
    "AuditCheck",
    "AuditReport",
    "ExpectedCounts",
    "AnnotationParseError",
    "SPLITS",
    "BEE_DATASET_COUNTS",
    "parse_annotation_file",
    "serialize_annotations",
    "parse_index",
    "load_dataset",
    "write_dataset",
    "remap",
    "histogram",
    "consistency_audit",
]

SPLITS = ("train", "val", "test")


class AnnotationParseError(ValueError):
    """Malformed annotation or index content. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class BeeClass(enum.IntEnum):
    WORKER_NO_POLLEN = 1
    WORKER_POLLEN = 2
    DRONE = 3
    QUEEN = 4
    INFECTED_BEE = 5
    VARROA_MITE = 6

    @property
    def file_id(self) -> int:
        return self.value - 1

    @classmethod
    def from_file_id(cls, file_id: int) -> "BeeClass":
        return cls(file_id + 1)


# Positional index in each tuple = output class id; None means "drop".
_VARIANT_TABLES: dict[str, tuple[tuple[str, ...], dict[BeeClass, int | None]]] = {
    "all-classes": (
        ("worker-no-pollen", "worker-pollen", "drone", "queen", "infected-bee", "varroa-mite"),
        {c: c.file_id for c in BeeClass},
    ),
    "bees-mites": (
        ("bees", "v-mite"),
        {
            BeeClass.WORKER_NO_POLLEN: 0,
            BeeClass.WORKER_POLLEN: 0,
            BeeClass.DRONE: 0,
            BeeClass.QUEEN: 0,
            BeeClass.INFECTED_BEE: 0,
            BeeClass.VARROA_MITE: 1,
        },
    ),
    "healthy-ill": (
        ("healthy", "infected"),
        {
            BeeClass.WORKER_NO_POLLEN: 0,
            BeeClass.WORKER_POLLEN: 0,
            BeeClass.DRONE: 0,
            BeeClass.QUEEN: 0,
            BeeClass.INFECTED_BEE: 1,
            BeeClass.VARROA_MITE: None,
        },
    ),
    "mites-only": (
        ("v-mite",),
        {
            BeeClass.WORKER_NO_POLLEN: None,
            BeeClass.WORKER_POLLEN: None,
            BeeClass.DRONE: None,
            BeeClass.QUEEN: None,
            BeeClass.INFECTED_BEE: None,
            BeeClass.VARROA_MITE: 0,
        },
    ),
}


class DatasetVariant(enum.Enum):
    """Class taxonomy an annotation set is expressed in."""

    ALL_CLASSES = "all-classes"
    BEES_AND_MITES = "bees-mites"
    HEALTHY_AND_ILL = "healthy-ill"
    MITES_ONLY = "mites-only"

    @property
    def class_names(self) -> tuple[str, ...]:
        return _VARIANT_TABLES[self.value][0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def mapping(self) -> Mapping[BeeClass, int | None]:
        return _VARIANT_TABLES[self.value][1]

    def map_class(self, bee_class: BeeClass) -> int | None:
        return self.mapping[BeeClass(bee_class)]

    def sources(self, output_id: int) -> tuple[BeeClass, ...]:
        """Source classes that collapse onto ``output_id``."""
        return tuple(c for c, o in self.mapping.items() if o == output_id)

    @classmethod
    def parse(cls, value: "str | DatasetVariant") -> "DatasetVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown dataset variant {value!r}; expected one of {choices}") from None


@dataclass(frozen=True)
class Annotation:
    """One ground-truth object. ``label`` is an output class id of the owning variant."""

    label: int
    box: BoundingBox


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    dims: ImageDims
    annotations: tuple[Annotation, ...] = ()
    annotation_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))


@dataclass
class SplitDataset:
    train: list[LabeledImage] = field(default_factory=list)
    val: list[LabeledImage] = field(default_factory=list)
    test: list[LabeledImage] = field(default_factory=list)
    variant: DatasetVariant = DatasetVariant.ALL_CLASSES

    def split(self, name: str) -> list[LabeledImage]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def items(self):
        for name in SPLITS:
            yield name, self.split(name)

    @property
    def num_images(self) -> int:
        return sum(len(images) for _, images in self.items())


@dataclass(frozen=True)
class ClassHistogram:
    counts: dict[int, int]
    images: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def named(self, variant: DatasetVariant) -> dict[str, int]:
        return {name: self.counts.get(i, 0) for i, name in enumerate(variant.class_names)}

    def __getitem__(self, label: int) -> int:
        return self.counts.get(label, 0)


# ---------------------------------------------------------------------------
# annotation files


def _fmt(value: float) -> str:
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def parse_annotation_file(
    text: str,
    dims: ImageDims,
    num_classes: int = len(BeeClass),
    source: str | None = None,
) -> list[Annotation]:
    """Parse one per-image annotation file into pixel-space annotations.

    Labels keep their 0-based file ids. Boxes must have positive area and lie
    inside the image (up to float noise, which is clamped away).

    Raises:
        AnnotationParseError: naming the offending line.
    """
    out: list[Annotation] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise AnnotationParseError(f"expected 5 fields, got {len(fields)}", lineno, source)
        try:
            label = int(fields[0])
        except ValueError:
            raise AnnotationParseError(f"class id {fields[0]!r} is not an integer", lineno, source) from None
        if not 0 <= label < num_classes:
            raise AnnotationParseError(f"unknown class id {label}", lineno, source)
        try:
            cx, cy, w, h = (float(f) for f in fields[1:])
        except ValueError:
            raise AnnotationParseError("non-numeric coordinate", lineno, source) from None
        for name, v in zip(("cx", "cy", "w", "h"), (cx, cy, w, h)):
            if not 0.0 <= v <= 1.0:
                raise AnnotationParseError(f"{name}={v} outside [0, 1]", lineno, source)
        if w <= 0.0 or h <= 0.0:
            raise AnnotationParseError("zero-area box", lineno, source)
        x0, y0, x1, y1 = NormCenterBox(cx, cy, w, h).to_corners()
        if min(x0, y0) < -BOUNDS_EPS or max(x1, y1) > 1.0 + BOUNDS_EPS:
            raise AnnotationParseError("box extends outside the image", lineno, source)
        box = from_normalized(NormCenterBox(cx, cy, w, h), dims)
        out.append(Annotation(label, box))
    return out


def serialize_annotations(annotations: Iterable[Annotation], dims: ImageDims) -> str:
    """Canonical text form: six decimals, single spaces, LF endings."""
    lines = []
    for ann in annotations:
        n = to_normalized(ann.box, dims)
        lines.append(" ".join([str(int(ann.label)), _fmt(n.cx), _fmt(n.cy), _fmt(n.w), _fmt(n.h)]))
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# index files


@dataclass(frozen=True)
class IndexEntry:
    image_id: str
    dims: ImageDims
    split: str
    annotation_path: str


def parse_index(text: str, source: str | None = None) -> list[IndexEntry]:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 5:
            raise AnnotationParseError(f"expected 5 index fields, got {len(fields)}", lineno, source)
        image_id, width, height, split, path = fields
        try:
            dims = ImageDims(int(width), int(height))
        except ValueError as exc:
            raise AnnotationParseError(f"bad image size: {exc}", lineno, source) from None
        if split not in SPLITS:
            raise AnnotationParseError(f"unknown split {split!r}", lineno, source)
        entries.append(IndexEntry(image_id, dims, split, path))
    return entries


def load_dataset(index_path: str | Path, variant: DatasetVariant = DatasetVariant.ALL_CLASSES) -> SplitDataset:
    """Read an index file and every annotation file it references."""
    index_path = Path(index_path)
    root = index_path.parent
    ds = SplitDataset(variant=variant)
    for entry in parse_index(index_path.read_text(encoding="utf-8"), source=str(index_path)):
        ann_file = root / entry.annotation_path
        try:
            text = ann_file.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise AnnotationParseError(f"missing annotation file {ann_file}", source=str(index_path)) from None
        anns = parse_annotation_file(text, entry.dims, variant.num_classes, source=str(ann_file))
        ds.split(entry.split).append(LabeledImage(entry.image_id, entry.dims, anns, entry.annotation_path))
    logger.debug("loaded %d images from %s", ds.num_images, index_path)
    return ds


def write_dataset(ds: SplitDataset, out_dir: str | Path, index_name: str = "index.txt") -> Path:
    """Write annotation files under ``out_dir/labels`` plus an index; returns the index path."""
    out_dir = Path(out_dir)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    index_lines = []
    for split, images in ds.items():
        for img in images:
            rel = f"labels/{img.image_id}.txt"
            (out_dir / rel).write_text(serialize_annotations(img.annotations, img.dims), encoding="utf-8")
            index_lines.append(f"{img.image_id} {img.dims.width} {img.dims.height} {split} {rel}\n")
    index_path = out_dir / index_name
    index_path.write_text("".join(index_lines), encoding="utf-8")
    return index_path


# ---------------------------------------------------------------------------
# remapping and counting


def _remap_image(img: LabeledImage, variant: DatasetVariant) -> LabeledImage:
    kept = []
    for ann in img.annotations:
        out = variant.map_class(BeeClass.from_file_id(ann.label))
        if out is not None:
            kept.append(Annotation(out, ann.box))
    return replace(img, annotations=tuple(kept))


def remap(ds: SplitDataset, variant: DatasetVariant) -> SplitDataset:
    """Collapse an all-classes dataset onto ``variant``'s taxonomy.

    Dropped classes disappear, but their images stay (possibly with no
    annotations left) so per-split image counts never change.
    """
    variant = DatasetVariant.parse(variant)
    if ds.variant is not DatasetVariant.ALL_CLASSES:
        raise ValueError(f"remap expects an all-classes dataset, got {ds.variant.value}")
    return SplitDataset(
        train=[_remap_image(i, variant) for i in ds.train],
        val=[_remap_image(i, variant) for i in ds.val],
        test=[_remap_image(i, variant) for i in ds.test],
        variant=variant,
    )


def histogram(split: Sequence[LabeledImage]) -> ClassHistogram:
    counts: Counter[int] = Counter()
    for img in split:
        counts.update(a.label for a in img.annotations)
    return ClassHistogram(dict(sorted(counts.items())), len(split))


# ---------------------------------------------------------------------------
# auditing


@dataclass(frozen=True)
class ExpectedCounts:
    """Reference counts to audit a dataset against.

    ``class_totals`` maps each :class:`BeeClass` to its all-splits total.
    ``cells`` maps ``(variant, split)`` to per-output-class instance counts.
    ``images`` maps split name to image count.
    """

    class_totals: Mapping[BeeClass, int] = field(default_factory=dict)
    cells: Mapping[tuple[DatasetVariant, str], Mapping[int, int]] = field(default_factory=dict)
    images: Mapping[str, int] = field(default_factory=dict)


_BM, _HI, _MO = DatasetVariant.BEES_AND_MITES, DatasetVariant.HEALTHY_AND_ILL, DatasetVariant.MITES_ONLY

#: Reference counts of the 803-image honey-bee dataset. The all-classes
#: V.-mite total (424) does not equal its split rows (250 + 92 + 59 = 401).
BEE_DATASET_COUNTS = ExpectedCounts(
    class_totals={
        BeeClass.WORKER_NO_POLLEN: 1158,
        BeeClass.WORKER_POLLEN: 143,
        BeeClass.DRONE: 19,
        BeeClass.QUEEN: 52,
        BeeClass.INFECTED_BEE: 298,
        BeeClass.VARROA_MITE: 424,
    },
    cells={
        (_BM, "train"): {0: 1148, 1: 250},
        (_BM, "val"): {0: 274, 1: 92},
        (_BM, "test"): {0: 248, 1: 59},
        (_HI, "train"): {0: 956, 1: 192},
        (_HI, "val"): {0: 220, 1: 54},
        (_HI, "test"): {0: 196, 1: 52},
        (_MO, "train"): {0: 250},
        (_MO, "val"): {0: 92},
        (_MO, "test"): {0: 59},
    },
    images={"train": 561, "val": 127, "test": 115},
)


@dataclass(frozen=True)
class AuditCheck:
    rule: str
    passed: bool
    detail: str
    severity: str = "error"  # "error" or "warning"
    expected: int | None = None
    observed: int | None = None

    @property
    def discrepancy(self) -> int | None:
        if self.expected is None or self.observed is None:
            return None
        return self.expected - self.observed


@dataclass
class AuditReport:
    checks: list[AuditCheck] = field(default_factory=list)

    @property
    def failures(self) -> list[AuditCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def errors(self) -> list[AuditCheck]:
        return [c for c in self.failures if c.severity == "error"]

    @property
    def warnings(self) -> list[AuditCheck]:
        return [c for c in self.failures if c.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def format(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else c.severity.upper()
            lines.append(f"[{status}] {c.rule}: {c.detail}")
        lines.append(
            f"{len(self.checks)} checks, {len(self.errors)} errors, {len(self.warnings)} warnings"
        )
        return "\n".join(lines)


def consistency_audit(all_classes: SplitDataset, expected: ExpectedCounts | None = None) -> AuditReport:
    """Cross-check an all-classes dataset. Never raises on bad data.

    Rules: ``variant-sum`` (each variant cell equals the sum of its source
    classes), ``disjoint`` (no image id in two splits), ``unique`` (no
    duplicate ids inside a split), ``in-bounds`` (boxes inside their image,
    positive area) and, with ``expected``, ``expected-*`` comparisons which
    are reported as warnings.
    """
    report = AuditReport()
    checks = report.checks
    source_hists = {name: histogram(images) for name, images in all_classes.items()}

    # (a) variant cells are sums of their constituent classes
    for variant in (_BM, _HI, _MO):
        remapped = remap(all_classes, variant)
        for split, images in remapped.items():
            hist = histogram(images)
            for out_id, name in enumerate(variant.class_names):
                summed = sum(source_hists[split][c.file_id] for c in variant.sources(out_id))
                checks.append(
                    AuditCheck(
                        "variant-sum",
                        hist[out_id] == summed,
                        f"{variant.value}/{split}/{name}: {hist[out_id]} vs constituent sum {summed}",
                        expected=summed,
                        observed=hist[out_id],
                    )
                )
            if hist.images != source_hists[split].images:
                checks.append(AuditCheck("variant-sum", False, f"{variant.value}/{split}: image count changed"))

    # (b) splits disjoint, ids unique
    seen: dict[str, str] = {}
    overlaps = []
    for split, images in all_classes.items():
        ids = [img.image_id for img in images]
        dupes = sorted(i for i, n in Counter(ids).items() if n > 1)
        checks.append(
            AuditCheck("unique", not dupes, f"{split}: duplicate ids {dupes}" if dupes else f"{split}: ids unique")
        )
        for image_id in set(ids):
            if image_id in seen:
                overlaps.append(f"{image_id} ({seen[image_id]}/{split})")
            else:
                seen[image_id] = split
    checks.append(
        AuditCheck(
            "disjoint",
            not overlaps,
            f"images in several splits: {', '.join(sorted(overlaps))}" if overlaps else "splits are disjoint",
        )
    )

    # (c) geometry
    bad = []
    for split, images in all_classes.items():
        for img in images:
            for k, ann in enumerate(img.annotations):
                if not ann.box.within(img.dims) or ann.box.area <= 0.0:
                    bad.append(f"{split}/{img.image_id}#{k}")
    checks.append(
        AuditCheck("in-bounds", not bad, f"invalid boxes: {', '.join(bad)}" if bad else "all boxes inside their image")
    )

    # (d) reference table
    if expected is not None:
        for bee_class, count in expected.class_totals.items():
            observed = sum(h[bee_class.file_id] for h in source_hists.values())
            checks.append(
                AuditCheck(
                    "expected-total",
                    observed == count,
                    f"{bee_class.name.lower()}: expected {count}, observed {observed}"
                    + ("" if observed == count else f" (off by {count - observed})"),
                    severity="warning",
                    expected=count,
                    observed=observed,
                )
            )
        for (variant, split), cell in expected.cells.items():
            hist = histogram(remap(all_classes, variant).split(split))
            for out_id, count in cell.items():
                name = variant.class_names[out_id]
                checks.append(
                    AuditCheck(
                        "expected-cell",
                        hist[out_id] == count,
                        f"{variant.value}/{split}/{name}: expected {count}, observed {hist[out_id]}",
                        severity="warning",
                        expected=count,
                        observed=hist[out_id],
                    )
                )
        for split, count in expected.images.items():
            observed = source_hists[split].images
            checks.append(
                AuditCheck(
                    "expected-images",
                    observed == count,
                    f"{split}: expected {count} images, observed {observed}",
                    severity="warning",
                    expected=count,
                    observed=observed,
                )
            )
    return report
