"""Command line interface.

Exit status: 0 on success, 1 when a validation step fails (audit errors),
2 for malformed input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import anchors, augment, dataset, decode, metrics, report
from .geometry import ImageDims

logger = logging.getLogger("beedet")

EXIT_OK, EXIT_INVALID, EXIT_MALFORMED = 0, 1, 2


class _Malformed(Exception):
    pass


def _dims(text: str) -> ImageDims:
    try:
        w, h = text.lower().split("x")
        return ImageDims(int(w), int(h))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return v


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--variant", choices=[v.value for v in dataset.DatasetVariant if v.value != "all-classes"])
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--conf", type=_unit, default=None, help="confidence threshold (default 0.4 yolo, 0.3 ssd)")
    p.add_argument("--nms-iou", type=_unit, default=0.45)
    p.add_argument("--ap-method", choices=metrics.AP_METHODS, default="all-points")
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="beedet", description="Honey-bee / V.-mite detection tooling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common], help="per-split class counts for each dataset variant")
    p.add_argument("--index", type=Path, required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("audit", parents=[common], help="consistency checks on an all-classes dataset")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--expect", help="'builtin' for the reference bee dataset counts, or a JSON file")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("remap", parents=[common], help="write a dataset remapped onto --variant")
    p.add_argument("--index", type=Path, required=True)
    p.set_defaults(func=cmd_remap)

    p = sub.add_parser("augment", parents=[common], help="write the augmentation plan of the training split")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--retention", type=_unit, default=augment.DEFAULT_RETENTION)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("priors", parents=[common], help="generate SSD priors from a layer table")
    p.add_argument("--config", default="vgg16", help="layer table file, or 'vgg16' / 'mobilenet-v2'")
    p.add_argument("--input-size", type=int, default=300)
    p.add_argument("--dump", action="store_true", help="print every prior")
    p.add_argument("--mite-fit", action="store_true", help="report best IoU for 15 and 25 px mites")
    p.set_defaults(func=cmd_priors)

    p = sub.add_parser("decode", parents=[common], help="decode raw tensor containers to detections")
    p.add_argument("--arch", choices=["yolo", "ssd"], required=True)
    p.add_argument("--raw", type=Path, nargs="+", required=True)
    p.add_argument("--priors", help="SSD layer table file or builtin name (default vgg16)")
    p.add_argument("--anchors", type=Path, help="YOLO anchor file (default: stock anchors)")
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--dims", type=_dims, default=None, help="network frame WxH")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="evaluate detections against a dataset split")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--dets", type=Path, required=True)
    p.add_argument("--split", choices=dataset.SPLITS, default="test")
    p.add_argument("--arch", default="yolo")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render a run record and/or an infestation summary")
    p.add_argument("--record", type=Path)
    p.add_argument("--dets", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def _emit(args, name: str, text: str) -> None:
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _need_variant(args) -> dataset.DatasetVariant:
    if not args.variant:
        raise _Malformed("--variant is required for this command")
    return dataset.DatasetVariant.parse(args.variant)


def cmd_stats(args) -> int:
    ds = dataset.load_dataset(args.index)
    variants = [dataset.DatasetVariant.parse(args.variant)] if args.variant else list(dataset.DatasetVariant)
    lines = []
    for v in variants:
        remapped = ds if v is dataset.DatasetVariant.ALL_CLASSES else dataset.remap(ds, v)
        lines.append(f"[{v.value}]")
        for split, images in remapped.items():
            h = dataset.histogram(images)
            cells = " ".join(f"{k}={n}" for k, n in h.named(v).items())
            lines.append(f"  {split:<5} images={h.images} {cells}")
    _emit(args, "stats.txt", "\n".join(lines) + "\n")
    return EXIT_OK


def _load_expectation(source: str | None) -> dataset.ExpectedCounts | None:
    if source is None:
        return None
    if source == "builtin":
        return dataset.BEE_DATASET_COUNTS
    raw = json.loads(Path(source).read_text(encoding="utf-8"))
    cells = {}
    for cell in raw.get("cells", []):
        v = dataset.DatasetVariant.parse(cell["variant"])
        cells[(v, cell["split"])] = {int(k): int(n) for k, n in cell["counts"].items()}
    return dataset.ExpectedCounts(
        class_totals={dataset.BeeClass[k.upper()]: int(n) for k, n in raw.get("class_totals", {}).items()},
        cells=cells,
        images={k: int(n) for k, n in raw.get("images", {}).items()},
    )


def cmd_audit(args) -> int:
    ds = dataset.load_dataset(args.index)
    audit = dataset.consistency_audit(ds, _load_expectation(args.expect))
    _emit(args, "audit.txt", audit.format() + "\n")
    return EXIT_OK if audit.ok else EXIT_INVALID


def cmd_remap(args) -> int:
    variant = _need_variant(args)
    if not args.out:
        raise _Malformed("--out is required for remap")
    remapped = dataset.remap(dataset.load_dataset(args.index), variant)
    path = dataset.write_dataset(remapped, args.out)
    print(f"wrote {remapped.num_images} images to {path}")
    return EXIT_OK


def cmd_augment(args) -> int:
    if not args.out:
        raise _Malformed("--out is required for augment")
    ds = dataset.load_dataset(args.index)
    if args.variant:
        ds = dataset.remap(ds, dataset.DatasetVariant.parse(args.variant))
    plan = augment.plan_expansion(ds.train, args.seed, args.retention)
    path = augment.write_plan(plan, args.out)
    counts = augment.plan_histogram(plan)
    names = ds.variant.class_names
    summary = " ".join(f"{names[k]}={n}" for k, n in counts.items())
    print(f"wrote {len(plan)} plan entries to {path} ({summary})")
    return EXIT_OK


def _layers(source: str | None) -> list[anchors.SsdLayerConfig]:
    builtin = {"vgg16": anchors.VGG16_LAYERS, "mobilenet-v2": anchors.MOBILENET_V2_LAYERS}
    if source is None:
        return list(anchors.VGG16_LAYERS)
    if source in builtin:
        return list(builtin[source])
    return anchors.load_layer_config(source)


def cmd_priors(args) -> int:
    layers = _layers(args.config)
    priors = anchors.ssd_priors(layers, args.input_size)
    lines = [f"priors {len(priors)}"]
    if args.dump:
        for p in priors:
            cx, cy, w, h = p.box.as_tuple()
            lines.append(f"{p.layer} {p.cell[0]} {p.cell[1]} {p.slot} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}")
    if args.mite_fit:
        for fit in anchors.mite_anchor_fit(priors, (15, 25), args.input_size):
            lines.append(f"mite {fit.size:g}px best_iou={fit.best_iou:.4f} layer={fit.best_layer}")
    _emit(args, "priors.txt", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_decode(args) -> int:
    params = decode.DecodeParams.for_arch(
        args.arch,
        **({"conf_threshold": args.conf} if args.conf is not None else {}),
        nms_iou_threshold=args.nms_iou,
    )
    tensors = [decode.read_raw(p) for p in args.raw]
    by_image: dict[str, list[decode.RawTensor]] = {}
    for t in tensors:
        by_image.setdefault(t.image_id, []).append(t)
    dets = []
    if args.arch == "yolo":
        text = args.anchors.read_text(encoding="utf-8") if args.anchors else ""
        size = args.input_size or (args.dims.width if args.dims else None)
        cfg = anchors.parse_anchor_config(text, size)
        for image_id in sorted(by_image):
            dets += decode.decode_yolo(by_image[image_id], cfg, params, args.dims, image_id)
    else:
        size = args.input_size or 300
        priors = anchors.priors_to_array(anchors.ssd_priors(_layers(args.priors), size))
        dims = args.dims or ImageDims(size, size)
        for image_id in sorted(by_image):
            group = {t.layout: t for t in by_image[image_id]}
            if set(group) != {decode.SSD_LOC_LAYOUT, decode.SSD_SCORE_LAYOUT}:
                raise decode.DecodeError(f"image {image_id!r}: need one 'P,4' and one 'P,C' tensor")
            dets += decode.decode_ssd(
                group[decode.SSD_LOC_LAYOUT], group[decode.SSD_SCORE_LAYOUT], priors, params, dims, image_id
            )
    out = "".join(d.to_json() + "\n" for d in dets)
    _emit(args, "detections.jsonl", out)
    return EXIT_OK


def cmd_eval(args) -> int:
    variant = _need_variant(args)
    ds = dataset.remap(dataset.load_dataset(args.index), variant)
    images = ds.split(args.split)
    gts = metrics.ground_truth_from_images(images)
    known = {img.image_id for img in images}
    dets = [d for d in decode.read_detections(args.dets) if d.image_id in known]
    conf = args.conf if args.conf is not None else 0.0
    classes = list(range(variant.num_classes))
    result = metrics.evaluate(
        dets, gts, classes, variant.class_names, args.ap_method, score_threshold=conf
    )
    cfg = report.RunConfig(
        variant, args.arch, conf, args.nms_iou, args.ap_method, args.split,
        {"index": str(args.index), "dets": str(args.dets)},
    )
    text, record = report.render_report(result, cfg)
    sys.stdout.write(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "table.txt").write_text(text, encoding="utf-8")
        (args.out / "record.json").write_text(report.dump_record(record), encoding="utf-8")
        for c in classes:
            points = metrics.pr_curve(
                [d for d in dets if d.label == c], [g for g in gts if g.label == c], 0.5
            )
            name = variant.class_names[c]
            (args.out / f"pr_{name}.csv").write_text(report.pr_curve_csv(points), encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.record and not args.dets:
        raise _Malformed("report needs --record and/or --dets")
    chunks = []
    if args.record:
        chunks.append(report.render_record(json.loads(args.record.read_text(encoding="utf-8"))))
    if args.dets:
        summary = report.infestation(decode.read_detections(args.dets), _need_variant(args))
        chunks.append(summary.format() + "\n")
    _emit(args, "report.txt", "".join(chunks))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (_Malformed, dataset.AnnotationParseError, decode.DecodeError, anchors.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
