# detector.py

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from CactusEval import settings
from CactusEval.annotations import BoundingBox, Detection, ImageRecord, format_number, iou
from CactusEval.dataset import DatasetManifest, SplitAssignment
from CactusEval.errors import BackendError, PredictionError, ValidationError

logger = logging.getLogger(__name__)


class DetectorBackend:
    """Base class of every detector backend.

    Subclasses set ``name`` and implement ``detect``. ``concurrent`` tells the
    runner whether ``detect`` may be called from several threads at once.
    """

    name: str = "backend"
    concurrent: bool = False

    def open(self):
        pass

    def close(self):
        pass

    def detect(self, record: ImageRecord, pixels: Any = None) -> list[Detection]:
        raise NotImplementedError(f"{type(self).__name__}.detect")

    def __enter__(self):
        self.open()
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class OracleConfig:
    jitter_px: float = 0.0
    drop_rate: float = 0.0
    ghost_rate: float = 0.0
    misclass_rate: float = 0.0
    confidence_floor: float = 1.0
    seed: int = settings.SEED

    def __post_init__(self):
        for name in ("drop_rate", "ghost_rate", "misclass_rate", "confidence_floor"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} {value} outside [0, 1]")
        if not (np.isfinite(self.jitter_px) and self.jitter_px >= 0):
            raise ValidationError(f"jitter_px {self.jitter_px} must be finite and non-negative")


@dataclass(frozen=True)
class PredictionSet:
    detections: dict[str, tuple[Detection, ...]] = field(default_factory=dict)
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.detections)

    def total(self) -> int:
        return sum(len(dets) for dets in self.detections.values())


def nms(detections: Sequence[Detection], iou_threshold: float = settings.NMS_IOU_THRESHOLD,
        class_aware: bool = True) -> list[Detection]:
    """Greedy non-maximum suppression, highest confidence first."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValidationError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    remaining = sorted(detections, key=lambda d: -d.confidence)
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [d for d in remaining
                     if (class_aware and d.class_id != best.class_id) or iou(best.box, d.box) < iou_threshold]
    return kept


def image_seed(seed: int, image_id: str) -> int:
    """Per-image seed so one image's noise never depends on the others."""
    digest = hashlib.sha256(f"{seed}:{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _jitter(box: BoundingBox, rng: np.random.Generator, jitter: float, width: int, height: int) -> BoundingBox:
    x_min, y_min, x_max, y_max = (v + rng.uniform(-jitter, jitter) for v in box.as_tuple())
    x_min, x_max = (float(np.clip(v, 0, width)) for v in (x_min, x_max))
    y_min, y_max = (float(np.clip(v, 0, height)) for v in (y_min, y_max))
    # Keep at least one pixel of extent.
    if x_max - x_min < 1:
        x_max = min(float(width), x_min + 1)
        x_min = x_max - 1
    if y_max - y_min < 1:
        y_max = min(float(height), y_min + 1)
        y_min = y_max - 1
    return BoundingBox(x_min, y_min, x_max, y_max)


def _random_box(rng: np.random.Generator, width: int, height: int) -> BoundingBox:
    x_min = rng.uniform(0, width - 1)
    y_min = rng.uniform(0, height - 1)
    return BoundingBox(x_min, y_min, rng.uniform(x_min + 1, width), rng.uniform(y_min + 1, height))


def oracle_detect(record: ImageRecord, config: OracleConfig, num_classes: int) -> list[Detection]:
    """Ground truth turned into controllably imperfect detections."""
    rng = np.random.default_rng(image_seed(config.seed, record.image_id))
    detections = []
    for ann in record.annotations:
        if config.drop_rate and rng.random() < config.drop_rate:
            continue
        box = ann.box
        if config.jitter_px:
            box = _jitter(box, rng, config.jitter_px, record.width, record.height)
        class_id = ann.class_id
        if config.misclass_rate and num_classes > 1 and rng.random() < config.misclass_rate:
            others = [c for c in range(num_classes) if c != class_id]
            class_id = others[int(rng.integers(len(others)))]
        confidence = float(rng.uniform(config.confidence_floor, 1.0))
        detections.append(Detection(class_id, box, confidence))

    if config.ghost_rate and record.width >= 1 and record.height >= 1:
        ceiling = float(np.median([d.confidence for d in detections])) if detections else config.confidence_floor
        ghosts = int(rng.binomial(len(record.annotations), config.ghost_rate))
        for _ in range(ghosts):
            detections.append(Detection(int(rng.integers(num_classes)), _random_box(rng, record.width, record.height),
                                        float(rng.uniform(0.0, ceiling)) if ceiling > 0 else 0.0))
    return detections


def parse_prediction_line(line: str, lineno: int | None = None) -> tuple[str, Detection]:
    """One detection: image_id class confidence x_min y_min x_max y_max."""
    fields = line.split()
    if len(fields) != 7:
        raise PredictionError(f"expected 7 fields, got {len(fields)}", lineno)
    image_id = fields[0]
    try:
        class_id = int(fields[1])
        confidence = float(fields[2])
        coords = tuple(float(v) for v in fields[3:])
    except ValueError:
        raise PredictionError(f"non-numeric field in {line.strip()!r}", lineno) from None
    if class_id < 0:
        raise PredictionError(f"negative class {class_id}", lineno)
    try:
        return image_id, Detection(class_id, BoundingBox(*coords), confidence)
    except ValidationError as e:
        raise PredictionError(str(e), lineno) from None


def parse_predictions(text: str) -> dict[str, list[Detection]]:
    detections: dict[str, list[Detection]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        image_id, det = parse_prediction_line(line, lineno)
        detections.setdefault(image_id, []).append(det)
    return detections


def load_predictions(path: str | Path, manifest: DatasetManifest) -> PredictionSet:
    parsed = parse_predictions(Path(path).read_text(encoding="utf-8"))
    known = manifest.by_id()
    if unknown := sorted(set(parsed) - set(known)):
        raise PredictionError(f"unknown image ids: {', '.join(unknown)}", offenders=unknown)
    detections = {image_id: tuple(parsed.get(image_id, ())) for image_id in sorted(known)}
    logger.info(f"loaded {sum(map(len, parsed.values()))} detections for {len(parsed)} images from {path}")
    return PredictionSet(detections, str(path))


def dump_predictions(predictions: PredictionSet | Mapping[str, Sequence[Detection]]) -> str:
    """Prediction-file text sorted by image_id, then descending confidence."""
    detections = predictions.detections if isinstance(predictions, PredictionSet) else predictions
    lines = []
    for image_id in sorted(detections):
        for det in sorted(detections[image_id], key=lambda d: -d.confidence):
            coords = " ".join(format_number(v) for v in det.box.as_tuple())
            lines.append(f"{image_id} {det.class_id} {format_number(det.confidence)} {coords}")
    return "".join(f"{line}\n" for line in lines)


def timed_detect(backend: DetectorBackend, record: ImageRecord) -> tuple[list[Detection], float]:
    """Run one detect call and return its detections with the wall time in milliseconds."""
    start = time.perf_counter()
    try:
        detections = backend.detect(record)
    except BackendError:
        raise
    except Exception as e:
        logger.error(f"{backend.name} failed on {record.image_id}: {e}")
        raise BackendError(str(e), record.image_id) from e
    return detections, (time.perf_counter() - start) * 1000


def run_detector(backend: DetectorBackend, manifest: DatasetManifest, split: SplitAssignment | None = None,
                 workers: int = settings.WORKERS) -> tuple[PredictionSet, list[tuple[str, float]]]:
    """Detect over one split in image_id order; returns predictions and per-image timings (ms)."""
    records = manifest.select(split)
    logger.info(f"{backend.name} running on {len(records)} images")
    if workers > 1 and backend.concurrent:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: timed_detect(backend, r), records))
    else:
        results = [timed_detect(backend, record) for record in records]

    detections = {record.image_id: tuple(dets) for record, (dets, _) in zip(records, results)}
    timings = [(record.image_id, ms) for record, (_, ms) in zip(records, results)]
    return PredictionSet(detections, backend.name), timings


def apply_nms(predictions: PredictionSet, iou_threshold: float = settings.NMS_IOU_THRESHOLD,
              class_aware: bool = True) -> PredictionSet:
    """Per-image NMS over a prediction set; image order and provenance are kept."""
    kept = {image_id: tuple(nms(dets, iou_threshold, class_aware)) for image_id, dets in predictions.detections.items()}
    removed = predictions.total() - sum(len(dets) for dets in kept.values())
    logger.info(f"nms at IoU {iou_threshold} removed {removed} detections")
    return PredictionSet(kept, predictions.provenance)
