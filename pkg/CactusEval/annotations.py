# annotations.py

import math
from dataclasses import dataclass
from typing import Iterator, Literal, NamedTuple, TypedDict

import yaml

from CactusEval import settings
from CactusEval.errors import LabelParseError, ValidationError

LabelFormat = Literal["corner_pixel", "normalized_center"]
LABEL_FORMATS = ("corner_pixel", "normalized_center")

ImageDims = tuple[int, int]
NormalizedBox = tuple[float, float, float, float]

# Tolerance for float noise when normalized boxes touch the image border.
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class DiseaseClass:
    id: int
    name: str
    display_name: str = ""
    symptom_summary: str = ""


@dataclass(frozen=True)
class ClassTaxonomy:
    classes: tuple[DiseaseClass, ...]

    def __post_init__(self):
        if not self.classes:
            raise ValidationError("taxonomy needs at least one class")
        for idx, cls in enumerate(self.classes):
            if cls.id != idx:
                raise ValidationError(f"class ids must be contiguous from 0, got {cls.id} at position {idx}")
            if not cls.name or any(ch.isspace() for ch in cls.name):
                raise ValidationError(f"class {cls.id} has an invalid name {cls.name!r}")
        names = [cls.name for cls in self.classes]
        if len(set(names)) != len(names):
            raise ValidationError(f"class names are not unique: {names}")

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[DiseaseClass]:
        return iter(self.classes)

    def __contains__(self, class_id: object) -> bool:
        return isinstance(class_id, int) and 0 <= class_id < len(self.classes)

    @property
    def names(self) -> list[str]:
        return [cls.name for cls in self.classes]

    def by_id(self, class_id: int) -> DiseaseClass:
        if class_id not in self:
            raise KeyError(class_id)
        return self.classes[class_id]

    def by_name(self, name: str) -> DiseaseClass:
        for cls in self.classes:
            if cls.name == name:
                return cls
        raise KeyError(name)

    def label(self, class_id: int) -> str:
        """Human readable name, falls back to the identifier."""
        cls = self.by_id(class_id)
        return cls.display_name or cls.name


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel corner form: left X, top Y, right X, bottom Y."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"box {coords} has a non-finite coordinate")
        if any(c < 0 for c in coords):
            raise ValidationError(f"box {coords} has a negative coordinate")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"box {coords} has no area")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.x_max, self.y_max

    def fits(self, dims: ImageDims) -> bool:
        width, height = dims
        return self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: BoundingBox


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    relative_path: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    # Explicit class for records without annotations (used for stratification).
    class_tag: int | None = None

    @property
    def dims(self) -> ImageDims:
        return self.width, self.height

    @property
    def stratum(self) -> int | None:
        if self.annotations:
            return self.annotations[0].class_id
        return self.class_tag


class Violation(NamedTuple):
    field: str
    rule: str
    message: str


class TaxonomyEntry(TypedDict):
    id: int
    name: str
    display_name: str
    symptom_summary: str


_DEFAULT_CLASSES = (
    ("anthracnose", "Anthracnose",
     "Starts as a small black spot that spreads into a blistering black tint on the skin; "
     "black latex may leak from the wound."),
    ("canker", "Canker",
     "Starts as a small dot; the wound rises, turns brown, swells and cracks into rough hard scabs "
     "edged by a yellow, orange or brown band."),
    ("lack_of_care", "Lack of care",
     "Wrinkles, softness, scars or scratches, dull colour, or brownish skin with slowly growing "
     "small black spots."),
    ("aphid", "Aphid",
     "Small insects hiding in hard to see areas; the plant withers as they draw water and growth "
     "is interrupted."),
    ("normal", "Normal", "Healthy cactus without visible disease."),
    ("plant_rusts", "Plant rusts",
     "Yellow-orange spots like iron rust, possibly raised and cracked; rust dust tends to start "
     "from the base of the trunk."),
)


def default_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy(tuple(DiseaseClass(idx, name, display, summary)
                               for idx, (name, display, summary) in enumerate(_DEFAULT_CLASSES)))


def load_taxonomy(text: str) -> ClassTaxonomy:
    """Build a taxonomy from a YAML document with a ``classes`` list."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ValidationError(f"taxonomy is not valid YAML: {e}") from e
    if not isinstance(data, dict) or not isinstance(data.get("classes"), list):
        raise ValidationError("taxonomy needs a 'classes' list")
    classes = []
    for entry in sorted(data["classes"], key=lambda e: e.get("id", -1) if isinstance(e, dict) else -1):
        if not isinstance(entry, dict) or "id" not in entry or "name" not in entry:
            raise ValidationError(f"taxonomy entry {entry!r} needs an id and a name")
        classes.append(DiseaseClass(int(entry["id"]), str(entry["name"]),
                                    str(entry.get("display_name", "")),
                                    str(entry.get("symptom_summary", ""))))
    return ClassTaxonomy(tuple(classes))


def dump_taxonomy(taxonomy: ClassTaxonomy) -> str:
    entries = [TaxonomyEntry(id=cls.id, name=cls.name, display_name=cls.display_name,
                             symptom_summary=cls.symptom_summary) for cls in taxonomy]
    return yaml.safe_dump({"classes": entries}, default_flow_style=False, allow_unicode=True, sort_keys=False)


def format_number(value: float) -> str:
    """Integers print bare, other values with six decimals unless that loses the value."""
    if float(value).is_integer():
        return str(int(value))
    text = f"{value:.{settings.LABEL_DECIMALS}f}"
    return text if float(text) == value else repr(float(value))


def _snap(value: float, limit: float) -> float:
    """Pull float noise at the image border back onto the border."""
    if -_EDGE_EPS * max(limit, 1) < value < 0:
        return 0.0
    if limit < value < limit + _EDGE_EPS * max(limit, 1):
        return float(limit)
    return value


def _check_dims(dims: ImageDims | None):
    if dims is None:
        raise ValidationError("normalized_center needs image dimensions")
    width, height = dims
    if width <= 0 or height <= 0:
        raise ValidationError(f"image dimensions {width}x{height} must be positive")


def box_area(box: BoundingBox) -> float:
    return box.width * box.height


def translate_box(box: BoundingBox, dx: float, dy: float) -> BoundingBox:
    return BoundingBox(box.x_min + dx, box.y_min + dy, box.x_max + dx, box.y_max + dy)


def scale_box(box: BoundingBox, k: float) -> BoundingBox:
    return BoundingBox(box.x_min * k, box.y_min * k, box.x_max * k, box.y_max * k)


def convert_box(box: BoundingBox | NormalizedBox, from_form: LabelFormat, to_form: LabelFormat,
                image_dims: ImageDims) -> BoundingBox | NormalizedBox:
    """Convert between corner pixels and normalized (cx, cy, w, h)."""
    for form in (from_form, to_form):
        if form not in LABEL_FORMATS:
            raise ValidationError(f"unknown box form {form!r}")
    _check_dims(image_dims)
    if from_form == to_form:
        return box
    width, height = image_dims
    if from_form == "corner_pixel":
        if not box.fits(image_dims):
            raise ValidationError(f"box {box.as_tuple()} exceeds image {width}x{height}")
        return ((box.x_min + box.x_max) / 2 / width,
                (box.y_min + box.y_max) / 2 / height,
                (box.x_max - box.x_min) / width,
                (box.y_max - box.y_min) / height)

    cx, cy, w, h = box
    if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
        raise ValidationError(f"normalized box {tuple(box)} has a value outside [0, 1]")
    x_min = _snap(cx * width - w * width / 2, width)
    x_max = _snap(cx * width + w * width / 2, width)
    y_min = _snap(cy * height - h * height / 2, height)
    y_max = _snap(cy * height + h * height / 2, height)
    if x_min < 0 or y_min < 0 or x_max > width or y_max > height:
        raise ValidationError(f"normalized box {tuple(box)} leaves the image")
    return BoundingBox(x_min, y_min, x_max, y_max)


def parse_label_file(text: str, format: LabelFormat, image_dims: ImageDims | None = None) -> list[Annotation]:
    """Parse one label file, one object per line: class followed by four coordinates."""
    if format not in LABEL_FORMATS:
        raise ValidationError(f"unknown label format {format!r}")
    if format == "normalized_center":
        _check_dims(image_dims)

    annotations = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 5:
            raise LabelParseError(f"expected 5 fields, got {len(fields)}", lineno)
        try:
            class_id = int(fields[0])
            values = tuple(float(v) for v in fields[1:])
        except ValueError:
            raise LabelParseError(f"non-numeric field in {line!r}", lineno) from None
        if class_id < 0:
            raise LabelParseError(f"negative class {class_id}", lineno)
        if not all(math.isfinite(v) for v in values):
            raise LabelParseError(f"non-finite coordinate in {line!r}", lineno)

        try:
            if format == "corner_pixel":
                box = BoundingBox(*values)
            else:
                box = convert_box(values, "normalized_center", "corner_pixel", image_dims)
        except ValidationError as e:
            raise ValidationError(str(e), lineno) from None
        annotations.append(Annotation(class_id, box))
    return annotations


def serialize_label_file(annotations: list[Annotation], format: LabelFormat,
                         image_dims: ImageDims | None = None) -> str:
    if format not in LABEL_FORMATS:
        raise ValidationError(f"unknown label format {format!r}")
    if format == "normalized_center":
        _check_dims(image_dims)

    lines = []
    for ann in annotations:
        if image_dims is not None and not ann.box.fits(image_dims):
            raise ValidationError(f"box {ann.box.as_tuple()} exceeds image {image_dims[0]}x{image_dims[1]}")
        if format == "corner_pixel":
            values = ann.box.as_tuple()
        else:
            values = convert_box(ann.box, "corner_pixel", "normalized_center", image_dims)
        lines.append(" ".join([str(ann.class_id), *map(format_number, values)]))
    return "".join(f"{line}\n" for line in lines)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = box_area(a) + box_area(b) - inter
    return inter / union


def validate_record(record: ImageRecord, taxonomy: ClassTaxonomy) -> list[Violation]:
    """List every broken invariant of one record; an empty list means valid."""
    violations = []
    if not record.image_id or any(ch.isspace() for ch in record.image_id):
        violations.append(Violation("image_id", "invalid-id", f"image id {record.image_id!r} is empty or has whitespace"))
    if not record.relative_path:
        violations.append(Violation("relative_path", "empty-path", f"{record.image_id} has no path"))
    dims_ok = True
    for name in ("width", "height"):
        value = getattr(record, name)
        if not isinstance(value, int) or value <= 0:
            violations.append(Violation(name, "non-positive-dims", f"{record.image_id} {name} {value!r} must be a positive integer"))
            dims_ok = False
    if record.class_tag is not None and record.class_tag not in taxonomy:
        violations.append(Violation("class_tag", "unknown-class", f"{record.image_id} class tag {record.class_tag} is not in the taxonomy"))

    for idx, ann in enumerate(record.annotations):
        prefix = f"annotations[{idx}]"
        if ann.class_id not in taxonomy:
            violations.append(Violation(f"{prefix}.class_id", "unknown-class",
                                        f"{record.image_id} class {ann.class_id} is not in the taxonomy"))
        if dims_ok and not ann.box.fits(record.dims):
            violations.append(Violation(f"{prefix}.box", "out-of-bounds",
                                        f"{record.image_id} box {ann.box.as_tuple()} exceeds {record.width}x{record.height}"))
    return violations
