"""Result tables, infestation summaries and run records."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .dataset import DatasetVariant
from .decode import Detection
from .metrics import EvalReport, PRPoint

__all__ = ["RunConfig", "InfestationSummary", "round_half_up", "render_report", "infestation", "pr_curve_csv"]

COLUMNS = ("mAP[0.5]", "mAP[0.5:0.95]", "F1", "Precision", "Recall")
_FIELDS = ("ap50", "ap50_95", "f1", "precision", "recall")
_AVG_FIELDS = ("map50", "map50_95", "f1", "precision", "recall")


@dataclass
class RunConfig:
    variant: DatasetVariant = DatasetVariant.HEALTHY_AND_ILL
    architecture: str = "yolo"
    conf_threshold: float = 0.4
    nms_iou_threshold: float | None = 0.45
    ap_method: str = "all-points"
    split: str = "test"
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.variant = DatasetVariant.parse(self.variant)
        for name in ("conf_threshold", "nms_iou_threshold"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


def round_half_up(value: float, places: int = 3) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def render_report(report: EvalReport, config: RunConfig) -> tuple[str, dict]:
    """Render a result table plus a machine-readable record.

    One row per class with the columns of :data:`COLUMNS`; an ``Average`` row
    follows when there is more than one class. Table cells are rounded half-up
    to three decimals, the record keeps full precision.
    """
    rows = [[c.name] + [round_half_up(getattr(c, f)) for f in _FIELDS] for c in report.classes]
    if len(report.classes) > 1:
        rows.append(["Average"] + [round_half_up(getattr(report, f)) for f in _AVG_FIELDS])
    header = ["Class", *COLUMNS]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]

    def line(cells):
        return "| " + " | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))) + " |"

    title = f"{config.variant.value} / {config.architecture} / {config.split}"
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    text = "\n".join([title, line(header), sep, *(line(r) for r in rows)]) + "\n"

    record = {
        "format": "beedet-run/1",
        "config": config.as_dict(),
        # NaN is not valid JSON; absent values are stored as null
        "metrics": _denan(report.as_dict()),
    }
    return text, record


def _denan(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _denan(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_denan(v) for v in obj]
    return obj


def dump_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=2) + "\n"


def render_record(record: dict) -> str:
    """Re-render a stored run record as a table."""
    from .metrics import ClassMetrics

    nan = float("nan")
    m = record["metrics"]
    classes = tuple(ClassMetrics(**{k: (nan if v is None else v) for k, v in c.items()}) for c in m["classes"])
    avg = {k: (nan if v is None else v) for k, v in m["average"].items()}
    rep = EvalReport(classes, avg["map50"], avg["map50_95"], avg["precision"], avg["recall"], avg["f1"],
                     tuple(m["iou_thresholds"]), m["ap_method"])
    cfg = dict(record["config"])
    return render_report(rep, RunConfig(**cfg))[0]


@dataclass(frozen=True)
class InfestationSummary:
    variant: DatasetVariant
    counts: dict[str, int]
    ratio: float | None = None  # infected / (healthy + infected)
    mites_per_bee: float | None = None

    def format(self) -> str:
        parts = [f"{k}={v}" for k, v in self.counts.items()]
        if self.variant is DatasetVariant.HEALTHY_AND_ILL:
            parts.append("infestation_ratio=" + ("n/a" if self.ratio is None else f"{self.ratio:.4f}"))
        elif self.variant is DatasetVariant.BEES_AND_MITES:
            parts.append("mites_per_bee=" + ("n/a" if self.mites_per_bee is None else f"{self.mites_per_bee:.4f}"))
        return " ".join(parts)

    def as_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "counts": dict(self.counts),
            "ratio": self.ratio,
            "mites_per_bee": self.mites_per_bee,
        }


def infestation(dets: Iterable[Detection], variant: DatasetVariant | str) -> InfestationSummary:
    """Count detections per class and derive an infestation figure.

    Healthy/ill runs give ``infected / (healthy + infected)``; bees/mites runs
    give mites per detected bee. Either is ``None`` without any bees. Mite-only
    runs have no bee counts, so only the mite count is reported.
    """
    variant = DatasetVariant.parse(variant)
    names = variant.class_names
    counts = {name: 0 for name in names}
    for d in dets:
        if not 0 <= d.label < len(names):
            raise ValueError(f"class id {d.label} is not part of the {variant.value} taxonomy")
        counts[names[d.label]] += 1
    if variant is DatasetVariant.HEALTHY_AND_ILL:
        total = counts["healthy"] + counts["infected"]
        return InfestationSummary(variant, counts, ratio=counts["infected"] / total if total else None)
    if variant is DatasetVariant.BEES_AND_MITES:
        bees = counts["bees"]
        return InfestationSummary(variant, counts, mites_per_bee=counts["v-mite"] / bees if bees else None)
    return InfestationSummary(variant, counts)


def pr_curve_csv(points: Sequence[PRPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["confidence", "tp", "fp", "fn", "precision", "recall"])
    for p in points:
        writer.writerow([repr(p.confidence), p.tp, p.fp, p.fn, repr(p.precision), repr(p.recall)])
    return buf.getvalue()
