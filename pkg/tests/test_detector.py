# test_detector.py

import sys

import numpy as np
import pytest

from CactusEval.annotations import Annotation, BoundingBox, Detection, ImageRecord, iou
from CactusEval.backends import BACKENDS, DelayBackend, OracleBackend, ProcessBackend, ReplayBackend, get_backend
from CactusEval.dataset import DatasetManifest, SplitAssignment
from CactusEval.detector import (OracleConfig, PredictionSet, apply_nms, dump_predictions, image_seed,
                                 load_predictions, nms, oracle_detect, parse_prediction_line, parse_predictions,
                                 run_detector, timed_detect)
from CactusEval.errors import BackendError, PredictionError, ValidationError
from CactusEval.metrics import evaluate
from tests.conftest import class_manifest


def box(x0, x1):
    return BoundingBox(x0, 0, x1, 10)


def test_nms_chain():
    dets = [Detection(0, box(0, 10), 0.9), Detection(0, box(2.5, 12.5), 0.8), Detection(0, box(5, 15), 0.7)]
    assert nms(dets, 0.5) == [dets[0], dets[2]]
    assert nms(dets, 0.7) == dets
    assert nms(dets, 0.3) == [dets[0]]


def test_nms_class_aware():
    dets = [Detection(0, box(0, 10), 0.9), Detection(1, box(0, 10), 0.8)]
    assert nms(dets) == dets
    assert nms(dets, class_aware=False) == [dets[0]]


def test_nms_rejects_bad_threshold():
    with pytest.raises(ValidationError):
        nms([], 0.0)


def _random_detections(rng, count):
    dets = []
    for _ in range(count):
        x0, y0 = rng.uniform(0, 40, 2)
        dets.append(Detection(int(rng.integers(3)), BoundingBox(float(x0), float(y0), float(x0 + rng.uniform(2, 20)),
                                                                float(y0 + rng.uniform(2, 20))),
                              float(rng.uniform(0, 1))))
    return dets


@pytest.mark.parametrize("class_aware", [True, False])
def test_nms_is_idempotent_and_ordered(class_aware):
    rng = np.random.default_rng(5)
    for _ in range(50):
        kept = nms(_random_detections(rng, 30), 0.45, class_aware)
        assert nms(kept, 0.45, class_aware) == kept
        assert all(a.confidence >= b.confidence for a, b in zip(kept, kept[1:]))
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                if not class_aware or a.class_id == b.class_id:
                    assert iou(a.box, b.box) < 0.45


def test_apply_nms_per_image():
    overlapping = (Detection(0, box(0, 10), 0.9), Detection(0, box(1, 11), 0.8))
    predictions = PredictionSet({"a": overlapping, "b": overlapping[1:]}, "replay")
    suppressed = apply_nms(predictions, 0.5)
    assert suppressed.detections == {"a": overlapping[:1], "b": overlapping[1:]}
    assert suppressed.provenance == "replay"


def test_image_seed_is_stable():
    assert image_seed(0, "a") == image_seed(0, "a")
    assert image_seed(0, "a") != image_seed(1, "a")
    assert image_seed(0, "a") != image_seed(0, "b")


def test_oracle_without_noise_is_ground_truth():
    record = ImageRecord("a", "a.jpg", 100, 100, (Annotation(2, BoundingBox(5, 5, 50, 50)),))
    assert oracle_detect(record, OracleConfig(), 6) == [Detection(2, BoundingBox(5, 5, 50, 50), 1.0)]


def test_oracle_is_deterministic_per_image():
    record = ImageRecord("a", "a.jpg", 100, 100, tuple(Annotation(i % 6, BoundingBox(i, i, i + 20, i + 20))
                                                       for i in range(10)))
    config = OracleConfig(jitter_px=3, drop_rate=0.2, ghost_rate=0.3, misclass_rate=0.2, confidence_floor=0.4,
                          seed=7)
    first = oracle_detect(record, config, 6)
    assert first == oracle_detect(record, config, 6)
    for d in first:
        assert d.box.fits(record.dims)
        assert 0.0 <= d.confidence <= 1.0


def test_oracle_jitter_stays_within_bound():
    original = BoundingBox(1000, 1000, 1100, 1100)
    record = ImageRecord("a", "a.jpg", 10000, 10000, tuple(Annotation(0, original) for _ in range(2500)))
    detections = oracle_detect(record, OracleConfig(jitter_px=2.0, seed=3), 6)
    deviations = np.array([np.subtract(d.box.as_tuple(), original.as_tuple()) for d in detections]).ravel()
    assert deviations.size == 10000
    assert np.abs(deviations).max() <= 2.0
    assert abs(deviations.mean()) <= 0.1


def test_oracle_drop_everything():
    record = ImageRecord("a", "a.jpg", 100, 100, (Annotation(0, BoundingBox(5, 5, 50, 50)),))
    assert oracle_detect(record, OracleConfig(drop_rate=1.0), 6) == []


def test_oracle_config_validation():
    with pytest.raises(ValidationError):
        OracleConfig(drop_rate=1.5)
    with pytest.raises(ValidationError):
        OracleConfig(jitter_px=-1)


def test_oracle_replay_scores_one(taxonomy):
    manifest = class_manifest((3, 3, 3, 3, 3, 3))
    predictions, timings = run_detector(OracleBackend(), manifest, workers=4)
    assert len(timings) == 18
    report = evaluate(manifest, predictions.detections, taxonomy)
    assert report.map50 == report.map50_95 == 1.0


def test_parse_prediction_line():
    image_id, d = parse_prediction_line("img1 3 0.75 10 20 30 40")
    assert image_id == "img1"
    assert d == Detection(3, BoundingBox(10, 20, 30, 40), 0.75)


@pytest.mark.parametrize("text, line", [
    ("a 0 0.5 1 1 2\n", 1),
    ("a 0 0.5 1 1 2 2\na x 0.5 1 1 2 2\n", 2),
    ("# header\na 0 1.5 1 1 2 2\n", 2),
    ("a -1 0.5 1 1 2 2\n", 1),
])
def test_parse_predictions_reports_line(text, line):
    with pytest.raises(PredictionError) as err:
        parse_predictions(text)
    assert err.value.line == line


def test_prediction_file_round_trip(tmp_path):
    manifest = class_manifest((2, 0, 0, 0, 0, 0))
    dets = {"c0_000": (Detection(0, BoundingBox(1, 2, 3, 4), 0.25), Detection(1, BoundingBox(0, 0, 5.5, 5), 0.5))}
    text = dump_predictions(dets)
    assert text.splitlines()[0] == "c0_000 1 0.500000 0 0 5.500000 5"
    path = tmp_path / "predictions.txt"
    path.write_text(text, encoding="utf-8")
    loaded = load_predictions(path, manifest)
    assert loaded.detections["c0_001"] == ()
    assert set(loaded.detections["c0_000"]) == set(dets["c0_000"])
    assert dump_predictions(loaded) == text


def test_load_predictions_rejects_unknown_ids(tmp_path):
    path = tmp_path / "predictions.txt"
    path.write_text("ghost 0 0.5 0 0 1 1\n", encoding="utf-8")
    with pytest.raises(PredictionError) as err:
        load_predictions(path, class_manifest((1, 0, 0, 0, 0, 0)))
    assert err.value.offenders == ["ghost"]


def test_registry():
    assert sorted(BACKENDS) == ["delay", "oracle", "process", "replay"]
    assert isinstance(get_backend("delay", delay_ms=0), DelayBackend)
    with pytest.raises(BackendError):
        get_backend("yolo")


def test_replay_backend():
    record = ImageRecord("a", "a.jpg", 10, 10)
    dets = (Detection(0, BoundingBox(0, 0, 1, 1), 0.5),)
    backend = ReplayBackend(PredictionSet({"a": dets}))
    assert backend.detect(record) == list(dets)
    assert backend.detect(ImageRecord("b", "b.jpg", 10, 10)) == []


class _Broken(DelayBackend):
    def detect(self, record, pixels=None):
        raise RuntimeError("boom")


def test_timed_detect_wraps_failures():
    with pytest.raises(BackendError) as err:
        timed_detect(_Broken(), ImageRecord("a", "a.jpg", 10, 10))
    assert err.value.image_id == "a"


def test_run_detector_split_order():
    manifest = DatasetManifest(tuple(ImageRecord(i, f"{i}.jpg", 10, 10) for i in ("c", "a", "b")),
                               {"a": SplitAssignment.TEST, "c": SplitAssignment.TEST})
    predictions, timings = run_detector(DelayBackend(0), manifest, SplitAssignment.TEST)
    assert [i for i, _ in timings] == ["a", "c"]
    assert predictions.total() == 0


def _script(tmp_path, body: str):
    script = tmp_path / "detector.py"
    script.write_text(body, encoding="utf-8")
    return [sys.executable, str(script)]


def test_process_backend(tmp_path):
    command = _script(tmp_path, (
        "import json, sys\n"
        "for line in open(sys.argv[1], encoding='utf-8'):\n"
        "    r = json.loads(line)\n"
        "    print(r['image_id'], 0, 0.5, 0, 0, r['width'], r['height'])\n"))
    records = [ImageRecord("a", "a.jpg", 10, 20), ImageRecord("b", "b.jpg", 30, 40)]
    backend = ProcessBackend(command)
    result = backend.detect_batch(records)
    assert result["b"] == [Detection(0, BoundingBox(0, 0, 30, 40), 0.5)]
    assert backend.detect(records[0]) == [Detection(0, BoundingBox(0, 0, 10, 20), 0.5)]


def test_process_backend_failure(tmp_path):
    backend = ProcessBackend(_script(tmp_path, "import sys\nsys.exit(3)\n"))
    with pytest.raises(BackendError) as err:
        backend.detect(ImageRecord("a", "a.jpg", 10, 10))
    assert "status 3" in str(err.value)


def test_process_backend_needs_command():
    with pytest.raises(BackendError):
        ProcessBackend([])
