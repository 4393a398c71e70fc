# ProcessBackend.py

import logging
import subprocess
import tempfile
from pathlib import Path
from typing import Any, Sequence

from CactusEval.annotations import Detection, ImageRecord
from CactusEval.dataset import DatasetManifest, dump_manifest
from CactusEval.detector import DetectorBackend, parse_predictions
from CactusEval.errors import BackendError, PredictionError

logger = logging.getLogger(__name__)


class ProcessBackend(DetectorBackend):
    """Runs an external command once per batch.

    The command gets the path of a manifest slice (line-delimited records) as
    its last argument and prints prediction-file lines on stdout. A nonzero
    exit status is a failure.
    """

    name = "process"
    concurrent = False
    command: list[str]
    timeout: float | None

    def __init__(self, command: Sequence[str], timeout: float | None = None):
        if not command:
            raise BackendError("process backend needs a command")
        self.command = list(command)
        self.timeout = timeout

    def detect_batch(self, records: Sequence[ImageRecord]) -> dict[str, list[Detection]]:
        if not records:
            return {}
        with tempfile.TemporaryDirectory() as tmp:
            slice_path = Path(tmp) / "slice.jsonl"
            slice_path.write_text(dump_manifest(DatasetManifest(tuple(records))), encoding="utf-8")
            try:
                proc = subprocess.run([*self.command, str(slice_path)], capture_output=True, text=True,
                                      timeout=self.timeout, check=False)
            except (OSError, subprocess.TimeoutExpired) as e:
                raise BackendError(f"could not run {self.command[0]}: {e}", records[0].image_id) from e

        if proc.returncode != 0:
            logger.error(f"{self.command[0]} exited with {proc.returncode}: {proc.stderr.strip()}")
            raise BackendError(f"command exited with status {proc.returncode}", records[0].image_id)
        try:
            detections = parse_predictions(proc.stdout)
        except PredictionError as e:
            raise BackendError(f"unreadable command output: {e}", records[0].image_id) from e
        wanted = {record.image_id for record in records}
        if extra := sorted(set(detections) - wanted):
            logger.warning(f"{self.command[0]} returned detections for unrequested images {extra}")
        return {image_id: detections.get(image_id, []) for image_id in sorted(wanted)}

    def detect(self, record: ImageRecord, pixels: Any = None) -> list[Detection]:
        return self.detect_batch([record])[record.image_id]
