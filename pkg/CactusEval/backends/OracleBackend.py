# OracleBackend.py

from typing import Any

from CactusEval.annotations import Detection, ImageRecord
from CactusEval.detector import DetectorBackend, OracleConfig, oracle_detect


class OracleBackend(DetectorBackend):
    name = "oracle"
    concurrent = True
    config: OracleConfig
    num_classes: int

    def __init__(self, config: OracleConfig | None = None, num_classes: int = 6):
        self.config = config or OracleConfig()
        self.num_classes = num_classes

    def detect(self, record: ImageRecord, pixels: Any = None) -> list[Detection]:
        return oracle_detect(record, self.config, self.num_classes)
