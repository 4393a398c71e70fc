# ReplayBackend.py

from typing import Any

from CactusEval.annotations import Detection, ImageRecord
from CactusEval.detector import DetectorBackend, PredictionSet


class ReplayBackend(DetectorBackend):
    """Replays detections recorded in a prediction file."""

    name = "replay"
    concurrent = True
    predictions: PredictionSet

    def __init__(self, predictions: PredictionSet):
        self.predictions = predictions

    def detect(self, record: ImageRecord, pixels: Any = None) -> list[Detection]:
        return list(self.predictions.detections.get(record.image_id, ()))
