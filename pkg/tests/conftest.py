# conftest.py

from pathlib import Path

import pytest

from CactusEval.annotations import Annotation, BoundingBox, Detection, ImageRecord, default_taxonomy
from CactusEval.dataset import DatasetManifest
from CactusEval.metrics import Scene

# Records per class of the published dataset, in taxonomy order.
CLASS_SIZES = (136, 152, 164, 140, 140, 168)


@pytest.fixture
def taxonomy():
    return default_taxonomy()


def make_record(image_id: str, class_id: int, width: int = 640, height: int = 480,
                box: tuple = (10, 20, 110, 220)) -> ImageRecord:
    return ImageRecord(image_id, f"images/{image_id}.jpg", width, height,
                       (Annotation(class_id, BoundingBox(*box)),))


def class_manifest(sizes=CLASS_SIZES) -> DatasetManifest:
    """One annotated record per image, ``sizes[c]`` images for class ``c``."""
    records = [make_record(f"c{class_id}_{idx:03d}", class_id)
               for class_id, size in enumerate(sizes) for idx in range(size)]
    return DatasetManifest(tuple(records))


@pytest.fixture
def published_manifest():
    return class_manifest()


def _scene(image_id: str, class_id: int, found: bool, confidence: float) -> Scene:
    gt = Annotation(class_id, BoundingBox(0, 0, 10, 10))
    dets = (Detection(class_id, BoundingBox(0, 0, 10, 10), confidence),) if found else ()
    return Scene(image_id, (gt,), dets)


@pytest.fixture
def map9733_scenes():
    """Four classes found perfectly (5 each), two classes with 23 of 25 found."""
    scenes = []
    for class_id in range(6):
        total, found = (25, 23) if class_id in (1, 5) else (5, 5)
        for idx in range(total):
            scenes.append(_scene(f"c{class_id}_{idx:02d}", class_id, idx < found, 0.9 - idx * 0.01))
    return scenes


@pytest.fixture
def fixtures():
    return Path(__file__).parent / "fixtures"
