# pipelines.py

import datetime as dt
import json
import logging
from pathlib import Path
from typing import Any

import pandas as pd
import yaml

from CactusEval import __version__, settings

logger = logging.getLogger(__name__)


def to_json(data: Any) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def to_csv(header: list[str], rows: list[list]) -> str:
    # object dtype keeps every cell as given; None is written empty
    frame = pd.DataFrame(rows, columns=header, dtype=object)
    return frame.to_csv(index=False, lineterminator="\n")


class OutputPipeline:
    """Writes a command's outputs into one folder and stamps the run on close.

    Text payloads are written as they are. Other payloads are encoded by the
    file extension, .json or .yaml.
    """

    folder: Path
    written: list[str]

    def __init__(self, folder: str | Path):
        self.folder = Path(folder)
        self.written = []

    def open(self):
        self.folder.mkdir(parents=True, exist_ok=True)

    def process(self, filename: str, payload: Any) -> Path:
        path = self.folder / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        ext = path.suffix
        if not isinstance(payload, str) and ext not in (".json", ".yaml"):
            raise TypeError(f"cannot write {type(payload).__name__} to {filename}")
        with open(path, "w", encoding="utf-8", newline="") as file:
            if isinstance(payload, str):
                file.write(payload)
            elif ext == ".json":
                file.write(to_json(payload))
            else:
                yaml.safe_dump(payload, file, default_flow_style=False, allow_unicode=True, sort_keys=False)
        self.written.append(filename)
        logger.info(f"wrote {path}")
        return path

    def close(self, command: str, config: dict, arguments: dict | None = None):
        """Reproducibility stamp; the timestamp goes to a sidecar so the stamp is rerun-stable."""
        stamp = {
            "schema_version": settings.SCHEMA_VERSION,
            "tool": settings.PROJECT_NAME,
            "version": __version__,
            "command": command,
            "seed": config.get("seed"),
            "config": config,
            "arguments": arguments or {},
            "outputs": sorted(self.written),
        }
        (self.folder / settings.STAMP_FILE).write_text(to_json(stamp), encoding="utf-8")
        sidecar = {"timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")}
        (self.folder / settings.STAMP_TIME_FILE).write_text(to_json(sidecar), encoding="utf-8")
