# dataset.py

import json
import logging
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np
import yaml
from jsonschema import Draft7Validator

from CactusEval import settings
from CactusEval.annotations import (Annotation, BoundingBox, ClassTaxonomy, ImageDims, ImageRecord,
                                    LabelFormat, Violation, parse_label_file, serialize_label_file, validate_record)
from CactusEval.errors import AugmentError, SplitError, ValidationError
from utils.Table import render_table

logger = logging.getLogger(__name__)

ROTATIONS = (0, 90, 180, 270)
SIZES_FILE = "sizes.json"
DATA_FILE = "data.yaml"
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp")


class SplitAssignment(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = settings.TRAIN_FRAC
    val_frac: float = settings.VAL_FRAC
    test_frac: float = settings.TEST_FRAC
    seed: int = settings.SEED
    group_augmented: bool = settings.GROUP_AUGMENTED

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise SplitError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must sum to 1, got {sum(fracs)}")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...] = ()
    assignments: dict[str, SplitAssignment] = field(default_factory=dict)
    # image_id -> (base_image_id, rotation_degrees)
    lineage: dict[str, tuple[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [record.image_id for record in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate image ids: {dupes}")
        known = set(ids)
        if missing := sorted(set(self.assignments) - known):
            raise ValidationError(f"assignments for unknown image ids: {missing}")
        for image_id, (base_id, degrees) in self.lineage.items():
            if image_id not in known or base_id not in known:
                raise ValidationError(f"lineage {image_id} -> {base_id} names an unknown image")
            if degrees not in ROTATIONS:
                raise ValidationError(f"lineage {image_id} has rotation {degrees}")

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> dict[str, ImageRecord]:
        return {record.image_id: record for record in self.records}

    def base_of(self, image_id: str) -> str:
        return self.lineage.get(image_id, (image_id, 0))[0]

    def select(self, split: SplitAssignment | None) -> list[ImageRecord]:
        """Records of one split (all when ``split`` is None), ordered by image_id."""
        records = sorted(self.records, key=lambda r: r.image_id)
        if split is None:
            return records
        return [r for r in records if self.assignments.get(r.image_id) == split]


@dataclass(frozen=True)
class StatsTable:
    class_names: tuple[str, ...]
    # rows[i] = (train, val, test, unsplit) for class i
    rows: tuple[tuple[int, int, int, int], ...]

    @property
    def totals(self) -> tuple[int, int, int, int]:
        return tuple(sum(col) for col in zip(*self.rows)) if self.rows else (0, 0, 0, 0)

    def class_total(self, idx: int) -> int:
        return sum(self.rows[idx])

    def render(self) -> str:
        show_unsplit = self.totals[3] > 0
        header = ["Class", "Train", "Test", "Validation"] + (["Unsplit"] if show_unsplit else []) + ["Total"]

        def cells(name, row):
            train, val, test, unsplit = row
            counts = [train, test, val] + ([unsplit] if show_unsplit else []) + [sum(row)]
            return [name, *map(str, counts)]

        body = [cells(name, row) for name, row in zip(self.class_names, self.rows)]
        body.append(cells("Total", self.totals))
        return render_table(header, body, align="l" + "r" * (len(header) - 1))


@dataclass(frozen=True)
class LayoutSummary:
    root: str
    counts: dict[str, int]
    label_files: int
    copied: tuple[str, ...]
    placeholders: tuple[str, ...]

    def as_dict(self) -> dict:
        return {"root": self.root, "counts": dict(self.counts), "label_files": self.label_files,
                "copied": list(self.copied), "placeholders": list(self.placeholders)}


def split_counts(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """Per-class sizes: val and test round up, train takes the remainder."""
    # Rounding first keeps 0.2 * 140 at 28 instead of 28.000000000000004.
    val = math.ceil(round(spec.val_frac * n, 9))
    test = math.ceil(round(spec.test_frac * n, 9))
    return n - val - test, val, test


def split_dataset(manifest: DatasetManifest, spec: SplitSpec, taxonomy: ClassTaxonomy) -> DatasetManifest:
    """Stratified split: per class, a seeded shuffle of units sorted by id."""
    # A unit is one record, or one rotation family when group_augmented is set.
    units: dict[str, list[ImageRecord]] = {}
    for record in sorted(manifest.records, key=lambda r: r.image_id):
        key = manifest.base_of(record.image_id) if spec.group_augmented else record.image_id
        units.setdefault(key, []).append(record)

    strata: dict[int, list[str]] = {}
    by_id = manifest.by_id()
    for key, members in units.items():
        lead = by_id.get(key, members[0])
        stratum = lead.stratum
        if stratum is None:
            raise SplitError(f"{lead.image_id} has no annotation and no class tag")
        if stratum not in taxonomy:
            raise SplitError(f"{lead.image_id} has class {stratum} outside the taxonomy")
        strata.setdefault(stratum, []).append(key)

    assignments: dict[str, SplitAssignment] = {}
    for class_id in sorted(strata):
        keys = sorted(strata[class_id])
        train, val, test = split_counts(len(keys), spec)
        name = taxonomy.by_id(class_id).name
        if train < 0:
            raise SplitError(f"class {name} has {len(keys)} records, too few for the requested split")
        order = np.random.default_rng([spec.seed, class_id]).permutation(len(keys))
        for pos, idx in enumerate(order):
            split = (SplitAssignment.TRAIN if pos < train else
                     SplitAssignment.VAL if pos < train + val else SplitAssignment.TEST)
            for record in units[keys[idx]]:
                assignments[record.image_id] = split
        logger.info(f"{name} split into train {train}, val {val}, test {test}")

    return replace(manifest, assignments=assignments)


def rotate_box(box: BoundingBox, angle: int, image_dims: ImageDims) -> tuple[BoundingBox, ImageDims]:
    """Rotate a box clockwise by a right angle; 90 maps (x, y) to (H - y, x)."""
    width, height = image_dims
    if not box.fits(image_dims):
        raise AugmentError(f"box {box.as_tuple()} exceeds image {width}x{height}")
    if angle == 90:
        corners = [(height - y, x) for x in (box.x_min, box.x_max) for y in (box.y_min, box.y_max)]
        dims = (height, width)
    elif angle == 180:
        corners = [(width - x, height - y) for x in (box.x_min, box.x_max) for y in (box.y_min, box.y_max)]
        dims = (width, height)
    elif angle == 270:
        corners = [(y, width - x) for x in (box.x_min, box.x_max) for y in (box.y_min, box.y_max)]
        dims = (height, width)
    else:
        raise AugmentError(f"rotation angle must be 90, 180 or 270, got {angle}")
    xs, ys = zip(*corners)
    return BoundingBox(min(xs), min(ys), max(xs), max(ys)), dims


def _rotated_path(path: str, angle: int) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}_r{angle}{ext}"


def augment_rotations(manifest: DatasetManifest, angles: Iterable[int]) -> DatasetManifest:
    angles = sorted(set(angles))
    if bad := [a for a in angles if a not in ROTATIONS[1:]]:
        raise AugmentError(f"rotation angles must be in {ROTATIONS[1:]}, got {bad}")
    if not angles:
        return manifest
    if rotated := sorted(i for i, (_, deg) in manifest.lineage.items() if deg != 0):
        raise AugmentError(f"manifest is already augmented: {rotated[:5]}")

    records, lineage, assignments = [], dict(manifest.lineage), dict(manifest.assignments)
    seen = {record.image_id for record in manifest.records}
    for record in manifest.records:
        records.append(record)
        for angle in angles:
            image_id = f"{record.image_id}_r{angle}"
            if image_id in seen:
                raise AugmentError(f"generated id {image_id} already exists")
            seen.add(image_id)
            anns = tuple(Annotation(ann.class_id, rotate_box(ann.box, angle, record.dims)[0])
                         for ann in record.annotations)
            width, height = (record.height, record.width) if angle in (90, 270) else record.dims
            records.append(ImageRecord(image_id, _rotated_path(record.relative_path, angle), width, height,
                                       anns, record.class_tag))
            lineage[image_id] = (record.image_id, angle)
            if record.image_id in manifest.assignments:
                assignments[image_id] = manifest.assignments[record.image_id]
    logger.info(f"augmented {len(manifest)} records into {len(records)} with angles {angles}")
    return DatasetManifest(tuple(records), assignments, lineage)


def lineage_leakage(manifest: DatasetManifest) -> list[str]:
    """Base ids whose rotation family spans more than one split."""
    families: dict[str, set[SplitAssignment]] = {}
    for image_id, split in manifest.assignments.items():
        families.setdefault(manifest.base_of(image_id), set()).add(split)
    return sorted(base for base, splits in families.items() if len(splits) > 1)


def stats(manifest: DatasetManifest, taxonomy: ClassTaxonomy) -> StatsTable:
    columns = {SplitAssignment.TRAIN: 0, SplitAssignment.VAL: 1, SplitAssignment.TEST: 2}
    counts = [[0, 0, 0, 0] for _ in taxonomy]
    for record in manifest.records:
        stratum = record.stratum
        if stratum not in taxonomy:
            logger.warning(f"{record.image_id} has no class in the taxonomy, not counted")
            continue
        counts[stratum][columns.get(manifest.assignments.get(record.image_id), 3)] += 1
    return StatsTable(tuple(cls.display_name or cls.name for cls in taxonomy),
                      tuple(tuple(row) for row in counts))


def _image_name(record: ImageRecord) -> str:
    return f"{record.image_id}{os.path.splitext(record.relative_path)[1] or '.jpg'}"


def materialize_layout(manifest: DatasetManifest, root: str | Path, taxonomy: ClassTaxonomy,
                       label_format: LabelFormat = settings.LABEL_FORMAT,
                       source_root: str | Path | None = None,
                       workers: int = settings.WORKERS) -> LayoutSummary:
    """Write images/{split} and labels/{split} plus the dataset description file."""
    root = Path(root)
    if unassigned := sorted(r.image_id for r in manifest.records if r.image_id not in manifest.assignments):
        raise ValidationError(f"records without a split: {unassigned[:10]}")

    for kind in ("images", "labels"):
        for split in SplitAssignment:
            (root / kind / split.value).mkdir(parents=True, exist_ok=True)

    def write(record: ImageRecord) -> tuple[str, bool]:
        split = manifest.assignments[record.image_id].value
        label = root / "labels" / split / f"{record.image_id}.txt"
        label.write_text(serialize_label_file(list(record.annotations), label_format, record.dims),
                         encoding="utf-8")
        source = Path(source_root) / record.relative_path if source_root is not None else None
        if source is not None and source.is_file():
            shutil.copyfile(source, root / "images" / split / _image_name(record))
            return record.image_id, True
        return record.image_id, False

    records = sorted(manifest.records, key=lambda r: r.image_id)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(write, records))

    copied = tuple(image_id for image_id, ok in results if ok)
    placeholders = tuple(image_id for image_id, ok in results if not ok)
    for image_id in placeholders:
        logger.warning(f"{image_id} has no source image, listed as placeholder")

    sizes = {r.image_id: {"path": r.relative_path, "width": r.width, "height": r.height} for r in records}
    with open(root / SIZES_FILE, "w", encoding="utf-8") as file:
        json.dump(sizes, file, ensure_ascii=False, indent=2, sort_keys=True)
    description = {split.value: f"images/{split.value}" for split in SplitAssignment}
    description.update({"nc": len(taxonomy), "names": taxonomy.names})
    with open(root / DATA_FILE, "w", encoding="utf-8") as file:
        yaml.safe_dump(description, file, default_flow_style=False, allow_unicode=True, sort_keys=False)

    counts = {split.value: sum(1 for r in records if manifest.assignments[r.image_id] == split)
              for split in SplitAssignment}
    logger.info(f"materialized {len(records)} records under {root}: {counts}")
    return LayoutSummary(str(root), counts, len(records), copied, placeholders)


def scan_layout(root: str | Path, label_format: LabelFormat = settings.LABEL_FORMAT) -> DatasetManifest:
    """Rebuild a manifest from a written images/labels tree."""
    root = Path(root)
    sizes_path = root / SIZES_FILE
    sizes = json.loads(sizes_path.read_text(encoding="utf-8")) if sizes_path.is_file() else {}

    records, assignments = [], {}
    for split in SplitAssignment:
        label_dir = root / "labels" / split.value
        if not label_dir.is_dir():
            continue
        for label in sorted(label_dir.glob("*.txt")):
            image_id = label.stem
            image = next((p for p in sorted((root / "images" / split.value).glob(f"{image_id}.*"))
                          if p.suffix.lower() in IMAGE_SUFFIXES), None)
            pixels = cv2.imread(str(image)) if image is not None else None
            if pixels is not None:
                height, width = pixels.shape[:2]
                path = image.relative_to(root).as_posix()
            elif image_id in sizes:
                width, height = sizes[image_id]["width"], sizes[image_id]["height"]
                path = sizes[image_id].get("path", f"images/{split.value}/{image_id}")
            else:
                raise ValidationError(f"{image_id} has neither a readable image nor an entry in {SIZES_FILE}")
            try:
                anns = parse_label_file(label.read_text(encoding="utf-8"), label_format, (width, height))
            except ValidationError as e:
                raise ValidationError(f"{label}: {e}") from e
            records.append(ImageRecord(image_id, path, int(width), int(height), tuple(anns)))
            assignments[image_id] = split
    logger.info(f"scanned {len(records)} records from {root}")
    return DatasetManifest(tuple(records), assignments)


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["image_id", "path", "width", "height", "annotations"],
    "properties": {
        "image_id": {"type": "string", "minLength": 1},
        "path": {"type": "string"},
        "width": {"type": "integer"},
        "height": {"type": "integer"},
        "annotations": {
            "type": "array",
            "items": {"type": "array", "minItems": 5,
                      "items": [{"type": "integer", "minimum": 0}, *[{"type": "number"}] * 4],
                      "additionalItems": False},
        },
        "split": {"enum": [None, "train", "val", "test"]},
        "lineage": {"oneOf": [{"type": "null"},
                              {"type": "array", "minItems": 2, "maxItems": 2,
                               "items": [{"type": "string"}, {"enum": list(ROTATIONS)}]}]},
        "class_tag": {"type": ["integer", "null"]},
    },
}
_validator = Draft7Validator(MANIFEST_SCHEMA)


def record_to_line(manifest: DatasetManifest, record: ImageRecord) -> str:
    split = manifest.assignments.get(record.image_id)
    lineage = manifest.lineage.get(record.image_id)
    data = {
        "image_id": record.image_id,
        "path": record.relative_path,
        "width": record.width,
        "height": record.height,
        "annotations": [[ann.class_id, *ann.box.as_tuple()] for ann in record.annotations],
        "split": split.value if split else None,
        "lineage": list(lineage) if lineage else None,
        "class_tag": record.class_tag,
    }
    return json.dumps(data, ensure_ascii=False, sort_keys=True)


def dump_manifest(manifest: DatasetManifest) -> str:
    return "".join(f"{record_to_line(manifest, record)}\n" for record in manifest.records)


def _schema_errors(data) -> list[tuple[str, str]]:
    errors = sorted(_validator.iter_errors(data), key=lambda e: list(e.path))
    return [(".".join(str(p) for p in e.path) or "<record>", e.message) for e in errors]


def _annotation(cells: list) -> Annotation:
    # the schema has already made the class cell an integral value
    return Annotation(int(cells[0]), BoundingBox(*cells[1:]))


def load_manifest(text: str) -> DatasetManifest:
    """Parse line-delimited JSON records; schema problems carry the line number."""
    records, assignments, lineage = [], {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"malformed JSON: {e.msg}", lineno) from e
        if errors := _schema_errors(data):
            loc, message = errors[0]
            raise ValidationError(f"{loc}: {message}", lineno)
        try:
            anns = tuple(_annotation(a) for a in data["annotations"])
        except ValidationError as e:
            raise ValidationError(str(e), lineno) from None
        image_id = data["image_id"]
        records.append(ImageRecord(image_id, data["path"], data["width"], data["height"], anns,
                                   data.get("class_tag")))
        if data.get("split"):
            assignments[image_id] = SplitAssignment(data["split"])
        if data.get("lineage"):
            lineage[image_id] = (data["lineage"][0], int(data["lineage"][1]))
    return DatasetManifest(tuple(records), assignments, lineage)


def audit_manifest(text: str, taxonomy: ClassTaxonomy) -> tuple[list[ImageRecord], list[tuple[str, Violation]]]:
    """Like load_manifest, but every problem becomes a violation and reading goes on.

    Violations are keyed by image id, or by ``line N`` when the line has no
    usable id. Records that decode cleanly are returned for further checks.
    """
    records, found, seen = [], [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key = f"line {lineno}"
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            found.append((key, Violation("<record>", "malformed-json", f"line {lineno}: {e.msg}")))
            continue
        if isinstance(data, dict) and isinstance(data.get("image_id"), str) and data["image_id"]:
            key = data["image_id"]
        if errors := _schema_errors(data):
            found += [(key, Violation(loc, "schema", f"line {lineno}: {message}")) for loc, message in errors]
            continue

        anns, broken = [], []
        for idx, cells in enumerate(data["annotations"]):
            try:
                anns.append(_annotation(cells))
            except ValidationError as e:
                broken.append(Violation(f"annotations[{idx}].box", "degenerate-box", f"line {lineno}: {e}"))
        if broken:
            found += [(key, v) for v in broken]
            continue
        if key in seen:
            found.append((key, Violation("image_id", "duplicate-id", f"line {lineno}: {key} appears more than once")))
            continue
        seen.add(key)
        record = ImageRecord(key, data["path"], data["width"], data["height"], tuple(anns), data.get("class_tag"))
        found += [(key, v) for v in validate_record(record, taxonomy)]
        records.append(record)
    logger.info(f"audited {len(records)} records, {len(found)} violations")
    return records, found


def read_manifest(path: str | Path) -> DatasetManifest:
    return load_manifest(Path(path).read_text(encoding="utf-8"))


def write_manifest(manifest: DatasetManifest, path: str | Path):
    Path(path).write_text(dump_manifest(manifest), encoding="utf-8")
