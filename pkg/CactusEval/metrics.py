# metrics.py

import logging
from dataclasses import dataclass, field
from typing import Literal, Mapping, NamedTuple, Sequence

import numpy as np

from CactusEval import settings
from CactusEval.annotations import Annotation, ClassTaxonomy, Detection, iou
from CactusEval.dataset import DatasetManifest
from CactusEval.errors import MetricError, PredictionError
from utils.Table import render_table

logger = logging.getLogger(__name__)

Interpolation = Literal["all_point", "101_point"]
INTERPOLATIONS = ("all_point", "101_point")


class Scene(NamedTuple):
    """One image: its ground truth and the detections made on it."""

    image_id: str
    ground_truth: Sequence[Annotation]
    detections: Sequence[Detection]


@dataclass(frozen=True)
class MatchOutcome:
    # Indices into the detection list, descending confidence (ties keep input order).
    order: tuple[int, ...]
    # TP flag per entry of ``order``
    flags: tuple[bool, ...]
    # Matched ground-truth index per entry of ``order``
    matched: tuple[int | None, ...]
    fn_count: int

    @property
    def tp_count(self) -> int:
        return sum(self.flags)

    @property
    def fp_count(self) -> int:
        return len(self.flags) - self.tp_count


@dataclass(frozen=True)
class CountsPerClass:
    class_id: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn_images: int = 0

    @property
    def n(self) -> int:
        """Number of predictions the model made for the class."""
        return self.tp + self.fp

    def __add__(self, other: "CountsPerClass") -> "CountsPerClass":
        return CountsPerClass(self.class_id, self.tp + other.tp, self.fp + other.fp,
                              self.fn + other.fn, self.tn_images + other.tn_images)


@dataclass(frozen=True)
class PRCurve:
    class_id: int
    iou_threshold: float
    points: tuple[tuple[float, float], ...]
    # Confidence of the detection that produced each point.
    confidences: tuple[float, ...]
    n_gt: int


@dataclass(frozen=True)
class ConfusionMatrix:
    matrix: tuple[tuple[int, ...], ...]
    # FN per true class
    missed: tuple[int, ...]
    # FP matching no ground truth, per predicted class
    ghost: tuple[int, ...]
    iou_threshold: float
    confidence_threshold: float

    def as_array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=np.int64).reshape(len(self.missed), len(self.missed))


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = settings.IOU_THRESHOLD
    confidence_threshold: float = settings.CONFIDENCE_THRESHOLD
    interpolation: Interpolation = settings.INTERPOLATION

    def __post_init__(self):
        _check_threshold("iou_threshold", self.iou_threshold)
        _check_threshold("confidence_threshold", self.confidence_threshold)
        if self.interpolation not in INTERPOLATIONS:
            raise MetricError(f"interpolation must be one of {INTERPOLATIONS}, got {self.interpolation!r}")


@dataclass(frozen=True)
class EvalReport:
    counts: tuple[CountsPerClass, ...]
    # class_id -> AP at each threshold of ``thresholds``; None when the class has no ground truth
    ap: dict[int, tuple[float | None, ...]]
    thresholds: tuple[float, ...]
    per_threshold: tuple[float, ...]
    map50: float
    map50_95: float
    precision: float
    recall: float
    confusion: ConfusionMatrix
    config: EvalConfig = field(default_factory=EvalConfig)
    acceptable: bool = False


def _check_threshold(name: str, value: float):
    if not 0.0 < value <= 1.0:
        raise MetricError(f"{name} must be in (0, 1], got {value}")


def match_detections(ground_truth: Sequence[Annotation], detections: Sequence[Detection],
                     iou_threshold: float, class_aware: bool = True) -> MatchOutcome:
    """Greedy matching in descending confidence against the best-overlapping free ground truth."""
    _check_threshold("iou_threshold", iou_threshold)
    order = tuple(sorted(range(len(detections)), key=lambda i: -detections[i].confidence))
    taken = [False] * len(ground_truth)
    flags, matched = [], []
    for i in order:
        det = detections[i]
        best, best_iou = None, iou_threshold
        for j, gt in enumerate(ground_truth):
            if taken[j] or (class_aware and gt.class_id != det.class_id):
                continue
            overlap = iou(det.box, gt.box)
            if overlap > best_iou or (best is None and overlap >= best_iou):
                best, best_iou = j, overlap
        if best is not None:
            taken[best] = True
        flags.append(best is not None)
        matched.append(best)
    return MatchOutcome(order, tuple(flags), tuple(matched), taken.count(False))


def precision(counts: CountsPerClass) -> float:
    """TP / (TP + FP); 1.0 when nothing was predicted."""
    return counts.tp / counts.n if counts.n else 1.0


def recall(counts: CountsPerClass) -> float:
    """TP / (TP + FN); 1.0 when there was nothing to find."""
    total = counts.tp + counts.fn
    return counts.tp / total if total else 1.0


def _of_class(items: Sequence, class_id: int) -> list:
    return [item for item in items if item.class_id == class_id]


def pr_curve(scenes: Sequence[Scene], class_id: int, iou_threshold: float) -> PRCurve:
    pooled = []
    n_gt = 0
    for scene in scenes:
        gts = _of_class(scene.ground_truth, class_id)
        dets = _of_class(scene.detections, class_id)
        n_gt += len(gts)
        outcome = match_detections(gts, dets, iou_threshold)
        for rank, (idx, flag) in enumerate(zip(outcome.order, outcome.flags)):
            pooled.append((-dets[idx].confidence, scene.image_id, rank, flag))
    pooled.sort()

    if not pooled:
        return PRCurve(class_id, iou_threshold, (), (), n_gt)
    flags = np.array([p[3] for p in pooled], dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    rec = tp / n_gt if n_gt else np.zeros(len(tp))
    prec = tp / (tp + fp)
    points = tuple((float(r), float(p)) for r, p in zip(rec, prec))
    return PRCurve(class_id, iou_threshold, points, tuple(-p[0] for p in pooled), n_gt)


def average_precision(curve: PRCurve, interpolation: Interpolation = settings.INTERPOLATION) -> float | None:
    """Area under the precision envelope; None when the class has no ground truth."""
    if interpolation not in INTERPOLATIONS:
        raise MetricError(f"interpolation must be one of {INTERPOLATIONS}, got {interpolation!r}")
    if curve.n_gt == 0:
        return None
    if not curve.points:
        return 0.0
    rec = np.array([p[0] for p in curve.points])
    prec = np.array([p[1] for p in curve.points])
    envelope = np.flip(np.maximum.accumulate(np.flip(prec)))

    if interpolation == "all_point":
        # Recall grows by exactly 1/n_gt at every true positive.
        steps = np.diff(np.concatenate(([0.0], rec))) > 0
        return float(envelope[steps].sum() / curve.n_gt)

    samples = np.linspace(0.0, 1.0, settings.RECALL_SAMPLES)
    idx = np.searchsorted(rec, samples, side="left")
    sampled = np.where(idx < len(rec), envelope[np.minimum(idx, len(rec) - 1)], 0.0)
    return float(sampled.mean())


def class_aps(scenes: Sequence[Scene], taxonomy: ClassTaxonomy, iou_threshold: float,
              interpolation: Interpolation = settings.INTERPOLATION) -> dict[int, float | None]:
    return {cls.id: average_precision(pr_curve(scenes, cls.id, iou_threshold), interpolation)
            for cls in taxonomy}


def _mean_ap(aps: dict[int, float | None], iou_threshold: float) -> float:
    values = [ap for ap in aps.values() if ap is not None]
    if not values:
        raise MetricError(f"mAP@{iou_threshold:g} is undefined: no class has ground truth")
    return float(np.mean(values))


def map_at(scenes: Sequence[Scene], taxonomy: ClassTaxonomy, iou_threshold: float,
           interpolation: Interpolation = settings.INTERPOLATION) -> float:
    """Mean AP over classes with at least one ground truth."""
    return _mean_ap(class_aps(scenes, taxonomy, iou_threshold, interpolation), iou_threshold)


def map_range(scenes: Sequence[Scene], taxonomy: ClassTaxonomy,
              thresholds: Sequence[float] = settings.IOU_THRESHOLDS,
              interpolation: Interpolation = settings.INTERPOLATION) -> tuple[float, tuple[float, ...]]:
    if len(thresholds) != 10:
        raise MetricError(f"mAP@.5:.95 needs 10 thresholds, got {len(thresholds)}")
    per_threshold = tuple(map_at(scenes, taxonomy, thr, interpolation) for thr in thresholds)
    return float(np.mean(per_threshold)), per_threshold


def counts_at(scenes: Sequence[Scene], taxonomy: ClassTaxonomy, iou_threshold: float,
              confidence_threshold: float) -> tuple[CountsPerClass, ...]:
    """Per-class TP/FP/FN at an operating point, plus image-level true negatives."""
    _check_threshold("confidence_threshold", confidence_threshold)
    totals = [CountsPerClass(cls.id) for cls in taxonomy]
    for scene in scenes:
        kept = [d for d in scene.detections if d.confidence >= confidence_threshold]
        for cls in taxonomy:
            gts = _of_class(scene.ground_truth, cls.id)
            dets = _of_class(kept, cls.id)
            outcome = match_detections(gts, dets, iou_threshold)
            tn = int(not gts and not dets)
            totals[cls.id] += CountsPerClass(cls.id, outcome.tp_count, outcome.fp_count, outcome.fn_count, tn)
    return tuple(totals)


def confusion_matrix(scenes: Sequence[Scene], taxonomy: ClassTaxonomy, iou_threshold: float,
                     confidence_threshold: float) -> ConfusionMatrix:
    """Class-agnostic matching so that a detection may land on another class's ground truth."""
    _check_threshold("iou_threshold", iou_threshold)
    _check_threshold("confidence_threshold", confidence_threshold)
    k = len(taxonomy)
    matrix = np.zeros((k, k), dtype=np.int64)
    missed = np.zeros(k, dtype=np.int64)
    ghost = np.zeros(k, dtype=np.int64)
    for scene in scenes:
        kept = [d for d in scene.detections if d.confidence >= confidence_threshold]
        outcome = match_detections(scene.ground_truth, kept, iou_threshold, class_aware=False)
        hit = set()
        for idx, gt_idx in zip(outcome.order, outcome.matched):
            pred = kept[idx].class_id
            if gt_idx is None:
                ghost[pred] += 1
            else:
                matrix[scene.ground_truth[gt_idx].class_id, pred] += 1
                hit.add(gt_idx)
        for j, gt in enumerate(scene.ground_truth):
            if j not in hit:
                missed[gt.class_id] += 1
    return ConfusionMatrix(tuple(tuple(int(v) for v in row) for row in matrix),
                           tuple(int(v) for v in missed), tuple(int(v) for v in ghost),
                           iou_threshold, confidence_threshold)


def build_scenes(manifest: DatasetManifest, predictions: Mapping[str, Sequence[Detection]],
                 image_ids: Sequence[str] | None = None) -> list[Scene]:
    """Pair every record with its detections, ordered by image_id."""
    known = manifest.by_id()
    if unknown := sorted(set(predictions) - set(known)):
        raise PredictionError(f"predictions for unknown image ids: {', '.join(unknown)}", offenders=unknown)
    ids = sorted(image_ids) if image_ids is not None else sorted(known)
    return [Scene(image_id, known[image_id].annotations, tuple(predictions.get(image_id, ())))
            for image_id in ids]


def evaluate(manifest: DatasetManifest, predictions: Mapping[str, Sequence[Detection]],
             taxonomy: ClassTaxonomy, config: EvalConfig = EvalConfig(),
             image_ids: Sequence[str] | None = None) -> EvalReport:
    scenes = build_scenes(manifest, predictions, image_ids)
    logger.info(f"evaluating {len(scenes)} images at IoU {config.iou_threshold}, "
                f"confidence {config.confidence_threshold}, {config.interpolation}")

    counts = counts_at(scenes, taxonomy, config.iou_threshold, config.confidence_threshold)
    thresholds = settings.IOU_THRESHOLDS
    per_class = [class_aps(scenes, taxonomy, thr, config.interpolation) for thr in thresholds]
    per_threshold = tuple(_mean_ap(aps, thr) for aps, thr in zip(per_class, thresholds))
    ap = {cls.id: tuple(aps[cls.id] for aps in per_class) for cls in taxonomy}
    map50 = per_threshold[thresholds.index(0.5)]
    map50_95 = float(np.mean(per_threshold))

    summed = CountsPerClass(-1)
    for c in counts:
        summed += c
    report = EvalReport(
        counts=counts, ap=ap, thresholds=thresholds, per_threshold=per_threshold,
        map50=map50, map50_95=map50_95, precision=precision(summed), recall=recall(summed),
        confusion=confusion_matrix(scenes, taxonomy, config.iou_threshold, config.confidence_threshold),
        config=config, acceptable=map50 >= settings.ACCEPTABLE_MAP,
    )
    logger.info(f"precision {report.precision:.4f}, recall {report.recall:.4f}, "
                f"mAP@.5 {report.map50:.4f}, mAP@.5:.95 {report.map50_95:.4f}")
    return report


def report_to_dict(report: EvalReport, taxonomy: ClassTaxonomy) -> dict:
    classes = []
    for c in report.counts:
        aps = report.ap[c.class_id]
        cls = taxonomy.by_id(c.class_id)
        classes.append({
            "class_id": c.class_id,
            "name": cls.name,
            "display_name": cls.display_name,
            "ap50": aps[report.thresholds.index(0.5)],
            "ap50_95": None if None in aps else float(np.mean(aps)),
            "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn_images": c.tn_images,
            "precision": precision(c), "recall": recall(c),
            "ap": list(report.ap[c.class_id]),
        })
    return {
        "schema_version": settings.SCHEMA_VERSION,
        "config": {"iou_threshold": report.config.iou_threshold,
                   "confidence_threshold": report.config.confidence_threshold,
                   "interpolation": report.config.interpolation},
        "precision": report.precision,
        "recall": report.recall,
        "map50": report.map50,
        "map50_95": report.map50_95,
        "thresholds": list(report.thresholds),
        "per_threshold": list(report.per_threshold),
        "acceptable": report.acceptable,
        "classes": classes,
        "confusion": confusion_to_dict(report.confusion, taxonomy),
        "notes": ["precision is 1.0 when a class has no predictions; recall is 1.0 when it has no ground truth",
                  "AP is null and excluded from mAP for classes without ground truth"],
    }


def confusion_to_dict(confusion: ConfusionMatrix, taxonomy: ClassTaxonomy) -> dict:
    return {"names": taxonomy.names, "matrix": [list(row) for row in confusion.matrix],
            "missed": list(confusion.missed), "ghost": list(confusion.ghost),
            "iou_threshold": confusion.iou_threshold,
            "confidence_threshold": confusion.confidence_threshold}


REPORT_COLUMNS = ["class_id", "name", "tp", "fp", "fn", "tn_images", "precision", "recall", "ap50", "ap50_95"]


def report_rows(data: dict) -> list[list]:
    """Flat per-class rows of a serialized report, for CSV output."""
    return [["" if row[column] is None else row[column] for column in REPORT_COLUMNS] for row in data["classes"]]


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_report(data: dict) -> str:
    """Headline figures followed by a per-class table, from a serialized report."""
    head = (f"Precision      {_fmt(data['precision'])}\n"
            f"Recall         {_fmt(data['recall'])}\n"
            f"mAP@.5         {_fmt(data['map50'])}\n"
            f"mAP@.5:.95     {_fmt(data['map50_95'])}\n"
            f"Acceptable     {'yes' if data['acceptable'] else 'no'} (mAP@.5 >= {settings.ACCEPTABLE_MAP:g})\n")
    body = [[row["display_name"], row["tp"], row["fp"], row["fn"], row["tn_images"], _fmt(row["precision"]),
             _fmt(row["recall"]), _fmt(row["ap50"]), _fmt(row["ap50_95"])] for row in data["classes"]]
    table = render_table(["Class", "TP", "FP", "FN", "TN", "P", "R", "AP@.5", "AP@.5:.95"], body,
                         align="lrrrrrrrr")
    return f"{head}\n{table}"


def render_confusion(confusion: ConfusionMatrix, taxonomy: ClassTaxonomy) -> str:
    names = [cls.name for cls in taxonomy]
    body = [[name, *row, missed] for name, row, missed in zip(names, confusion.matrix, confusion.missed)]
    body.append(["(ghost)", *confusion.ghost, ""])
    return render_table(["true \\ predicted", *names, "(missed)"], body, align="l" + "r" * (len(names) + 1))
