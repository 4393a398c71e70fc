# DelayBackend.py

import time
from typing import Any

from CactusEval.annotations import Detection, ImageRecord
from CactusEval.detector import DetectorBackend


class DelayBackend(DetectorBackend):
    """Sleeps a fixed time per image, optionally wrapping another backend."""

    name = "delay"
    concurrent = True
    delay_ms: float
    inner: DetectorBackend | None

    def __init__(self, delay_ms: float = 5.0, inner: DetectorBackend | None = None):
        self.delay_ms = delay_ms
        self.inner = inner

    def detect(self, record: ImageRecord, pixels: Any = None) -> list[Detection]:
        time.sleep(self.delay_ms / 1000)
        return self.inner.detect(record, pixels) if self.inner else []
