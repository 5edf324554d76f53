"""Detection-pipeline tooling for honey-bee and V.-mite monitoring.

Annotation handling and class remapping, augmentation planning, YOLO/SSD
anchor generation and output decoding, and detection evaluation.
"""
from .anchors import (
    DEFAULT_YOLO_ANCHORS,
    MOBILENET_V2_LAYERS,
    VGG16_LAYERS,
    SsdLayerConfig,
    YoloAnchorConfig,
    mite_anchor_fit,
    ssd_priors,
    yolo_grid_shapes,
)
from .augment import plan_expansion, transform_annotations
from .dataset import (
    Annotation,
    BeeClass,
    DatasetVariant,
    LabeledImage,
    SplitDataset,
    consistency_audit,
    histogram,
    load_dataset,
    parse_annotation_file,
    remap,
)
from .decode import DecodeParams, Detection, decode_ssd, decode_yolo, nms
from .estimators import (
    AugmentationPlanner,
    DetectionEvaluator,
    PriorBoxGenerator,
    SsdDecoder,
    VariantRemapper,
    YoloDecoder,
)
from .geometry import BoundingBox, ImageDims, NormCenterBox, iou, rotate_box
from .metrics import GroundTruth, average_precision, evaluate, f1, map_range, match, precision_recall
from .report import RunConfig, infestation, render_report

__version__ = "0.1.0"
