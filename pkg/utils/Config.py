# Config.py

import json
import os
from pathlib import Path
from threading import Lock
from typing import Any, TypedDict

from CactusEval import settings
from CactusEval.errors import ConfigError


class RunConfig(TypedDict):
    taxonomy: str
    label_format: str
    train_frac: float
    val_frac: float
    test_frac: float
    group_augmented: bool
    angles: list[int]
    iou_threshold: float
    confidence_threshold: float
    nms_iou_threshold: float
    interpolation: str
    seed: int
    output_dir: str
    warmup: int
    repeats: int
    workers: int


DEFAULTS = RunConfig(
    taxonomy="builtin",
    label_format=settings.LABEL_FORMAT,
    train_frac=settings.TRAIN_FRAC,
    val_frac=settings.VAL_FRAC,
    test_frac=settings.TEST_FRAC,
    group_augmented=settings.GROUP_AUGMENTED,
    angles=list(settings.ROTATION_ANGLES),
    iou_threshold=settings.IOU_THRESHOLD,
    confidence_threshold=settings.CONFIDENCE_THRESHOLD,
    nms_iou_threshold=settings.NMS_IOU_THRESHOLD,
    interpolation=settings.INTERPOLATION,
    seed=settings.SEED,
    output_dir=settings.OUTPUT_FOLDER,
    warmup=settings.WARMUP,
    repeats=settings.REPEATS,
    workers=settings.WORKERS,
)


class Config:
    """Run configuration: defaults < config file < environment < flags."""

    config_file: Path
    configs: RunConfig
    lock: Lock

    def __init__(self, config_file: str | Path | None = None, required: bool = False):
        self.lock = Lock()
        self.config_file = Path(config_file or settings.CONFIG_FILE)
        self.configs = RunConfig(**{k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS.items()})

        if self.config_file.is_file():
            with self.lock, open(self.config_file, "r", encoding="utf-8") as file:
                try:
                    data = json.load(file)
                except json.JSONDecodeError as e:
                    raise ConfigError(f"{self.config_file} is not valid JSON: {e}") from e
            self.set(data)
        elif required:
            raise ConfigError(f"config file {self.config_file} not found")

        if env_dir := os.environ.get(settings.OUTPUT_DIR_ENV):
            self.set({"output_dir": env_dir})

    def get(self, name: str) -> Any:
        with self.lock:
            return self.configs[name]

    def set(self, data: dict):
        """Merge values, ignoring None so unset flags keep earlier layers."""
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        if unknown := sorted(set(data) - set(DEFAULTS)):
            raise ConfigError(f"unknown configuration keys: {unknown}")
        with self.lock:
            for key, value in data.items():
                if value is None:
                    continue
                expected = type(DEFAULTS[key])
                if expected is float and isinstance(value, int) and not isinstance(value, bool):
                    value = float(value)
                if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                    raise ConfigError(f"{key} must be {expected.__name__}, got {value!r}")
                self.configs[key] = value

    def effective(self) -> dict:
        with self.lock:
            return dict(self.configs)

    def save(self, path: str | Path | None = None):
        with self.lock, open(path or self.config_file, "w", encoding="utf-8") as file:
            json.dump(self.configs, file, ensure_ascii=False, indent=2)
            file.write("\n")
