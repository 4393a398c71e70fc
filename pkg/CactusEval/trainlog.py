# trainlog.py

import io
import logging
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from CactusEval import settings
from CactusEval.errors import TrainLogError
from utils.Table import render_table

logger = logging.getLogger(__name__)

COLUMNS = ("epoch", "box_loss", "obj_loss", "cls_loss", "precision", "recall", "map50", "map50_95")
LOSSES = ("box_loss", "obj_loss", "cls_loss")
METRICS = ("precision", "recall", "map50", "map50_95")

Criterion = Literal["map50", "map50_95", "recall", "precision"]

# Header names seen in the wild -> canonical column.
DEFAULT_ADAPTER = {
    "Epoch": "epoch",
    "Box loss": "box_loss",
    "Object loss": "obj_loss",
    "Class loss": "cls_loss",
    "P": "precision",
    "R": "recall",
    "mAP@.5": "map50",
    "mAP @.5": "map50",
    "mAP@.5:.95": "map50_95",
    "mAP@.5 :.95": "map50_95",
    "mAP@.5 :.95:": "map50_95",
    "train/box_loss": "box_loss",
    "train/obj_loss": "obj_loss",
    "train/cls_loss": "cls_loss",
    "metrics/precision": "precision",
    "metrics/recall": "recall",
    "metrics/mAP_0.5": "map50",
    "metrics/mAP_0.5:0.95": "map50_95",
}


@dataclass(frozen=True)
class TrainLogRow:
    epoch: int
    box_loss: float
    obj_loss: float
    cls_loss: float
    precision: float
    recall: float
    map50: float
    map50_95: float

    @property
    def total_loss(self) -> float:
        return self.box_loss + self.obj_loss + self.cls_loss


@dataclass(frozen=True)
class TrainLogSummary:
    row_count: int
    final: TrainLogRow
    best: dict[str, TrainLogRow]
    # (epoch, box_loss + obj_loss + cls_loss) per row
    total_loss: tuple[tuple[int, float], ...]

    @property
    def loss(self) -> float:
        """Total loss at the best mAP@.5 epoch, the figure a comparison table reports."""
        return self.best["map50"].total_loss


def load_adapter(text: str) -> dict[str, str]:
    """Read a YAML mapping of extra header names onto the canonical columns."""
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise TrainLogError(f"column adapter is not valid YAML: {e}") from None
    if not isinstance(data, dict):
        raise TrainLogError("column adapter must be a mapping")
    if bad := sorted(str(v) for v in data.values() if v not in COLUMNS):
        raise TrainLogError(f"column adapter maps onto unknown columns: {bad}")
    return {str(k).strip(): str(v) for k, v in data.items()}


def _canonical(name: str, adapter: Mapping[str, str]) -> str | None:
    key = name.strip()
    if key in COLUMNS:
        return key
    if key in adapter:
        return adapter[key]
    lowered = {k.lower(): v for k, v in adapter.items()}
    return lowered.get(key.lower())


def _content_lines(text: str) -> list[tuple[int, str]]:
    # Blank and comment-only lines are dropped before pandas sees the text, so
    # frame row i is content line i + 1.
    return [(lineno, line) for lineno, line in enumerate(text.splitlines(), start=1)
            if line.split("#", 1)[0].strip()]


def _first_bad(mask: pd.Series) -> int | None:
    hits = np.flatnonzero(mask.to_numpy())
    return int(hits[0]) if hits.size else None


def _epochs(cells: pd.Series, linenos: list[int]) -> pd.Series:
    # "531/599" is epoch 531 of 599.
    current = cells.astype(str).str.split("/").str[0].str.strip()
    if (bad := _first_bad(~current.str.fullmatch(r"[+-]?\d+"))) is not None:
        raise TrainLogError(f"epoch value {cells.iloc[bad]!r} is not a number", linenos[bad])
    epochs = current.astype(int)
    if (bad := _first_bad(epochs < 0)) is not None:
        raise TrainLogError(f"epoch {epochs.iloc[bad]} is negative", linenos[bad])
    return epochs


def _numbers(column: str, cells: pd.Series, linenos: list[int]) -> pd.Series:
    if not pd.api.types.is_numeric_dtype(cells):
        text = cells.astype(str).str.strip()
        if (bad := _first_bad(pd.to_numeric(text, errors="coerce").isna())) is not None:
            raise TrainLogError(f"{column} value {cells.iloc[bad]!r} is not a number", linenos[bad])
        cells = text.astype(float)
    cells = cells.astype(float)
    if (bad := _first_bad(cells.isna())) is not None:
        raise TrainLogError(f"{column} value is not a number", linenos[bad])
    if (bad := _first_bad(~np.isfinite(cells))) is not None:
        raise TrainLogError(f"{column} value {cells.iloc[bad]} is not finite", linenos[bad])
    if column in LOSSES and (bad := _first_bad(cells < 0)) is not None:
        raise TrainLogError(f"{column} {cells.iloc[bad]} is negative", linenos[bad])
    if column in METRICS and (bad := _first_bad((cells < 0.0) | (cells > 1.0))) is not None:
        raise TrainLogError(f"{column} {cells.iloc[bad]} outside [0, 1]", linenos[bad])
    return cells


def parse_trainlog(text: str, adapter: Mapping[str, str] | None = None) -> list[TrainLogRow]:
    """Parse a per-epoch CSV log; columns are matched by name, not position."""
    adapter = {**DEFAULT_ADAPTER, **(adapter or {})}
    lines = _content_lines(text)
    try:
        frame = pd.read_csv(io.StringIO("\n".join(line for _, line in lines)), comment="#",
                            skipinitialspace=True, index_col=False, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise TrainLogError("training log has no header row") from None
    except pd.errors.ParserError as e:
        raise TrainLogError(f"malformed training log: {e}") from None

    header_lineno = lines[0][0]
    positions = {}
    for pos, name in enumerate(frame.columns):
        column = _canonical(str(name), adapter)
        if column is not None and column not in positions:
            positions[column] = pos
    if missing := [c for c in COLUMNS if c not in positions]:
        raise TrainLogError(f"missing column {missing[0]}" + (f" (and {missing[1:]})" if missing[1:] else ""),
                            header_lineno)

    linenos = [lineno for lineno, _ in lines[1:]]
    epochs = _epochs(frame.iloc[:, positions["epoch"]], linenos)
    values = [_numbers(c, frame.iloc[:, positions[c]], linenos) for c in COLUMNS[1:]]
    rows = [TrainLogRow(int(epoch), *(float(v) for v in cells)) for epoch, *cells in zip(epochs, *values)]
    rows.sort(key=lambda r: r.epoch)
    logger.info(f"parsed {len(rows)} training log rows")
    return rows


def best_epoch(rows: Sequence[TrainLogRow], criterion: Criterion) -> TrainLogRow:
    """Row maximizing the criterion; the lower epoch wins a tie."""
    if not rows:
        raise TrainLogError("no training log rows")
    if criterion not in METRICS:
        raise TrainLogError(f"unknown criterion {criterion!r}, expected one of {METRICS}")
    return max(rows, key=lambda r: (getattr(r, criterion), -r.epoch))


def summarize(rows: Sequence[TrainLogRow]) -> TrainLogSummary:
    if not rows:
        raise TrainLogError("no training log rows")
    ordered = sorted(rows, key=lambda r: r.epoch)
    return TrainLogSummary(
        row_count=len(ordered),
        final=ordered[-1],
        best={criterion: best_epoch(ordered, criterion) for criterion in METRICS},
        total_loss=tuple((r.epoch, r.total_loss) for r in ordered),
    )


def export_series(rows: Sequence[TrainLogRow], fields: Sequence[str]) -> str:
    """Epoch-ordered CSV of the requested columns."""
    if not fields:
        raise TrainLogError("no fields requested")
    if unknown := [f for f in fields if f not in COLUMNS]:
        raise TrainLogError(f"unknown field {unknown[0]}")
    ordered = sorted(rows, key=lambda r: r.epoch)
    frame = pd.DataFrame([[getattr(row, f) for f in fields] for row in ordered], columns=list(fields))
    return frame.to_csv(index=False, lineterminator="\n")


def row_to_dict(row: TrainLogRow) -> dict:
    return {column: getattr(row, column) for column in COLUMNS} | {"total_loss": row.total_loss}


def summary_to_dict(summary: TrainLogSummary) -> dict:
    return {
        "schema_version": settings.SCHEMA_VERSION,
        "row_count": summary.row_count,
        "final": row_to_dict(summary.final),
        "best": {criterion: row_to_dict(row) for criterion, row in summary.best.items()},
        "loss": summary.loss,
        "total_loss": [[epoch, loss] for epoch, loss in summary.total_loss],
    }


def render_summary(summary: TrainLogSummary) -> str:
    """Best row per criterion, then the final row."""
    labeled = [(f"best {criterion}", row) for criterion, row in summary.best.items()]
    labeled.append(("final", summary.final))
    body = [[label, row.epoch, *(f"{getattr(row, m):.4f}" for m in METRICS), f"{row.total_loss:.5f}"]
            for label, row in labeled]
    table = render_table(["Row", "Epoch", "P", "R", "mAP@.5", "mAP@.5:.95", "Loss"], body, align="lrrrrrr")
    return f"{summary.row_count} epochs logged\n{table}"
