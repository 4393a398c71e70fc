# report.py

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Sequence

from CactusEval import settings
from CactusEval.bench import (BenchEntry, LatencyReport, compare, comparison_rows, comparison_to_dict,
                              latency_from_dict, latency_to_dict, load_metadata, render_comparison,
                              render_latency)
from CactusEval.errors import ReportError
from CactusEval.metrics import REPORT_COLUMNS, render_report, report_rows
from CactusEval.pipelines import to_csv, to_json
from CactusEval.trainlog import parse_trainlog, summarize, summary_to_dict

logger = logging.getLogger(__name__)

ReportFormat = Literal["text", "json", "csv"]
REPORT_FORMATS = ("text", "json", "csv")


@dataclass
class ReportInput:
    """Artifacts gathered for one backend; any of them may be missing."""

    backend: str
    evaluation: dict | None = None
    latency: LatencyReport | None = None
    trainlog: dict | None = None
    metadata: dict[str, Any] = field(default_factory=dict)


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ReportError(f"{path} is not valid JSON: {e}") from None


def load_eval(path: str | Path) -> dict:
    data = _read_json(path)
    if not isinstance(data, dict) or "map50" not in data or "classes" not in data:
        raise ReportError(f"{path} is not an evaluation report")
    return data


def load_latency(path: str | Path) -> LatencyReport:
    data = _read_json(path)
    if not isinstance(data, dict) or "samples_ms" not in data:
        raise ReportError(f"{path} is not a latency report")
    try:
        return latency_from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ReportError(f"{path} is not a latency report: {e!r}") from None


def load_trainlog_summary(path: str | Path) -> dict:
    """A summary written by the trainlog command, or a raw training log CSV."""
    path = Path(path)
    if path.suffix != ".json":
        return summary_to_dict(summarize(parse_trainlog(path.read_text(encoding="utf-8"))))
    data = _read_json(path)
    if not isinstance(data, dict) or "loss" not in data:
        raise ReportError(f"{path} is not a training log summary")
    return data


def gather(evals: Sequence[tuple[str, str | Path]] = (), latencies: Sequence[str | Path] = (),
           trainlogs: Sequence[tuple[str, str | Path]] = (),
           metadata: str | Path | None = None) -> list[ReportInput]:
    """Group artifacts by backend, in order of first appearance."""
    inputs: dict[str, ReportInput] = {}

    def slot(backend: str) -> ReportInput:
        return inputs.setdefault(backend, ReportInput(backend))

    if metadata is not None:
        for entry in load_metadata(Path(metadata).read_text(encoding="utf-8")):
            slot(entry.backend).metadata = dict(entry.metadata)
    for backend, path in evals:
        slot(backend).evaluation = load_eval(path)
    for path in latencies:
        latency = load_latency(path)
        slot(latency.backend).latency = latency
    for backend, path in trainlogs:
        slot(backend).trainlog = load_trainlog_summary(path)
    return list(inputs.values())


def _entry(item: ReportInput) -> BenchEntry:
    meta = dict(item.metadata)
    if item.evaluation is not None:
        meta["map50"] = item.evaluation["map50"]
    if item.trainlog is not None:
        meta["loss"] = item.trainlog["loss"]
    return BenchEntry(item.backend, latency=item.latency, metadata=meta)


def _wants_comparison(inputs: Sequence[ReportInput]) -> bool:
    evals = sum(1 for item in inputs if item.evaluation is not None)
    return evals > 1 or any(item.metadata or item.latency or item.trainlog for item in inputs)


def generate_report(inputs: Sequence[ReportInput], format: ReportFormat = "text") -> str:
    if not inputs:
        raise ReportError("report needs at least one input artifact")
    if format not in REPORT_FORMATS:
        raise ReportError(f"format must be one of {REPORT_FORMATS}, got {format!r}")
    table = compare([_entry(item) for item in inputs]) if _wants_comparison(inputs) else None
    evaluated = [item for item in inputs if item.evaluation is not None]
    logger.info(f"report over {len(inputs)} backends in {format}")

    if format == "json":
        return to_json({
            "schema_version": settings.SCHEMA_VERSION,
            "comparison": comparison_to_dict(table) if table else None,
            "evaluations": {item.backend: item.evaluation for item in evaluated},
            "latency": {item.backend: latency_to_dict(item.latency) for item in inputs if item.latency},
            "trainlog": {item.backend: item.trainlog for item in inputs if item.trainlog},
        })

    if format == "csv":
        if table is not None:
            return to_csv(["backend", "map50", "loss", "training_time_h", "test_time_ms"], comparison_rows(table))
        return to_csv(["backend", *REPORT_COLUMNS],
                      [[item.backend, *row] for item in evaluated for row in report_rows(item.evaluation)])

    sections = []
    if table is not None:
        sections.append(f"Model comparison\n\n{render_comparison(table)}")
    for item in evaluated:
        sections.append(f"Evaluation of {item.backend}\n\n{render_report(item.evaluation)}")
    for item in inputs:
        if item.latency is not None:
            sections.append(f"Latency of {item.backend}\n\n{render_latency(item.latency)}")
    return "\n".join(sections)
