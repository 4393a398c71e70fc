# bench.py

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from CactusEval import settings
from CactusEval.dataset import DatasetManifest, SplitAssignment
from CactusEval.detector import DetectorBackend, timed_detect
from CactusEval.errors import BenchError
from CactusEval.metrics import EvalReport
from CactusEval.pipelines import to_csv
from CactusEval.trainlog import TrainLogSummary
from utils.Table import render_table

logger = logging.getLogger(__name__)

# Timing covers the whole detect call, including any pre- and post-processing
# the backend performs.
TIMING_NOTE = "wall-clock time of the full detect call per image, warmup excluded"


@dataclass(frozen=True)
class LatencyReport:
    backend: str
    samples: tuple[float, ...]
    # (image_id, repeat) per sample
    sample_keys: tuple[tuple[str, int], ...]
    images: int
    repeats: int
    warmup: int
    mean: float
    median: float
    p95: float
    min: float
    max: float

    @property
    def count(self) -> int:
        return len(self.samples)

    @classmethod
    def from_samples(cls, backend: str, samples: Sequence[float],
                     sample_keys: Sequence[tuple[str, int]] | None = None,
                     images: int | None = None, repeats: int = 1, warmup: int = 0) -> "LatencyReport":
        if not samples:
            raise BenchError(f"{backend} has no latency samples")
        values = np.asarray(samples, dtype=float)
        keys = tuple(sample_keys) if sample_keys is not None else tuple((str(i), 0) for i in range(len(samples)))
        return cls(backend, tuple(float(v) for v in values), keys,
                   images if images is not None else len(samples), repeats, warmup,
                   float(np.mean(values)), float(np.median(values)), float(np.percentile(values, 95)),
                   float(values.min()), float(values.max()))


@dataclass(frozen=True)
class ComparisonRow:
    backend: str
    map50: float | None = None
    loss: float | None = None
    training_time_h: float | None = None
    test_time_ms: float | None = None


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]


@dataclass(frozen=True)
class BenchEntry:
    """Everything known about one backend; ingested values fill what was not measured."""

    backend: str
    latency: LatencyReport | None = None
    evaluation: EvalReport | None = None
    trainlog: TrainLogSummary | None = None
    metadata: Mapping[str, Any] = field(default_factory=dict)


def measure(backend: DetectorBackend, manifest: DatasetManifest, warmup: int = settings.WARMUP,
            repeats: int = settings.REPEATS, split: SplitAssignment | None = None) -> LatencyReport:
    """Time each image ``repeats`` times, one call at a time, after ``warmup`` discarded calls."""
    if repeats < 1:
        raise BenchError(f"repeats must be at least 1, got {repeats}")
    if warmup < 0:
        raise BenchError(f"warmup must not be negative, got {warmup}")
    records = manifest.select(split)
    if not records:
        raise BenchError("cannot benchmark an empty manifest")

    logger.info(f"{backend.name} warming up with {warmup} calls")
    for i in range(warmup):
        timed_detect(backend, records[i % len(records)])

    samples, keys = [], []
    for repeat in range(repeats):
        for record in records:
            _, ms = timed_detect(backend, record)
            samples.append(ms)
            keys.append((record.image_id, repeat))
    report = LatencyReport.from_samples(backend.name, samples, keys, len(records), repeats, warmup)
    logger.info(f"{backend.name} mean {report.mean:.3f} ms over {report.count} samples")
    return report


def _first(*values: float | None) -> float | None:
    return next((v for v in values if v is not None), None)


def _meta(metadata: Mapping[str, Any], key: str) -> float | None:
    value = metadata.get(key)
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise BenchError(f"metadata {key} value {value!r} is not a number") from None


def compare(entries: Sequence[BenchEntry]) -> ComparisonTable:
    """One row per backend; values that were neither measured nor ingested stay absent."""
    if not entries:
        raise BenchError("nothing to compare")
    rows = []
    for entry in entries:
        meta = entry.metadata
        rows.append(ComparisonRow(
            backend=entry.backend,
            map50=_first(entry.evaluation.map50 if entry.evaluation else None, _meta(meta, "map50")),
            loss=_first(entry.trainlog.loss if entry.trainlog else None, _meta(meta, "loss")),
            training_time_h=_meta(meta, "training_time_h"),
            test_time_ms=_first(entry.latency.mean if entry.latency else None, _meta(meta, "test_time_ms")),
        ))
    if all(r.map50 is None and r.loss is None and r.training_time_h is None and r.test_time_ms is None
           for r in rows):
        raise BenchError("comparison has no populated metric")
    for row in rows:
        if missing := [name for name in ("map50", "loss", "training_time_h", "test_time_ms")
                       if getattr(row, name) is None]:
            logger.warning(f"{row.backend} has no value for {', '.join(missing)}")
    return ComparisonTable(tuple(rows))


def load_metadata(text: str) -> list[BenchEntry]:
    """Entries from a YAML list of {backend, map50, loss, training_time_h, test_time_ms}."""
    try:
        data = yaml.safe_load(text) or []
    except yaml.YAMLError as e:
        raise BenchError(f"metadata is not valid YAML: {e}") from None
    if isinstance(data, dict):
        data = data.get("entries", [])
    if not isinstance(data, list) or not all(isinstance(e, dict) and "backend" in e for e in data):
        raise BenchError("metadata must be a list of mappings with a 'backend' key")
    return [BenchEntry(str(e["backend"]), metadata=dict(e)) for e in data]


def _cell(value: float | None, unit: str = "") -> str:
    if value is None:
        return "-"
    return f"{value:g}{unit}"


COMPARISON_ROWS = (
    ("mAP@.5", "map50", ""),
    ("Loss", "loss", ""),
    ("Training Time", "training_time_h", " Hours"),
    ("Test Time per image", "test_time_ms", " milliseconds"),
)


def render_comparison(table: ComparisonTable) -> str:
    """Parameters as rows, one column per backend."""
    header = ["Parameter", *(row.backend for row in table.rows)]
    body = [[label, *(_cell(getattr(row, key), unit) for row in table.rows)]
            for label, key, unit in COMPARISON_ROWS]
    return render_table(header, body)


def comparison_to_dict(table: ComparisonTable) -> dict:
    return {"schema_version": settings.SCHEMA_VERSION,
            "rows": [{"backend": r.backend, "map50": r.map50, "loss": r.loss,
                      "training_time_h": r.training_time_h, "test_time_ms": r.test_time_ms}
                     for r in table.rows]}


def comparison_rows(table: ComparisonTable) -> list[list]:
    return [[r.backend, *("" if v is None else v for v in (r.map50, r.loss, r.training_time_h, r.test_time_ms))]
            for r in table.rows]


def latency_to_dict(report: LatencyReport) -> dict:
    return {"schema_version": settings.SCHEMA_VERSION, "backend": report.backend, "note": TIMING_NOTE,
            "count": report.count, "images": report.images, "repeats": report.repeats, "warmup": report.warmup,
            "mean_ms": report.mean, "median_ms": report.median, "p95_ms": report.p95,
            "min_ms": report.min, "max_ms": report.max, "samples_ms": list(report.samples)}


def latency_from_dict(data: Mapping[str, Any]) -> LatencyReport:
    return LatencyReport.from_samples(data["backend"], data["samples_ms"], None,
                                      data.get("images"), data.get("repeats", 1), data.get("warmup", 0))


def render_latency(report: LatencyReport) -> str:
    body = [[report.backend, str(report.count), *(f"{v:.3f}" for v in
                                                 (report.mean, report.median, report.p95, report.min, report.max))]]
    table = render_table(["Backend", "Samples", "Mean ms", "Median ms", "P95 ms", "Min ms", "Max ms"], body,
                         align="lrrrrrr")
    return f"# {TIMING_NOTE}\n{table}"


def export_samples(report: LatencyReport) -> str:
    rows = [[report.backend, idx, image_id, repeat, repr(ms)]
            for idx, (ms, (image_id, repeat)) in enumerate(zip(report.samples, report.sample_keys))]
    return to_csv(["backend", "index", "image_id", "repeat", "ms"], rows)
