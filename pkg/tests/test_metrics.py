# test_metrics.py

import numpy as np
import pytest

from CactusEval import settings
from CactusEval.annotations import Annotation, BoundingBox, Detection, ImageRecord, iou, scale_box
from CactusEval.dataset import DatasetManifest, rotate_box
from CactusEval.errors import MetricError, PredictionError
from CactusEval.metrics import (CountsPerClass, EvalConfig, PRCurve, Scene, average_precision, build_scenes,
                                confusion_matrix, counts_at, evaluate, map_at, map_range, match_detections,
                                pr_curve, precision, recall, render_confusion, render_report, report_rows,
                                report_to_dict)

W, H = 100, 60


def ann(class_id, *box):
    return Annotation(class_id, BoundingBox(*box))


def det(class_id, confidence, *box):
    return Detection(class_id, BoundingBox(*box), confidence)


def manifest_of(scenes, width=W, height=H):
    return DatasetManifest(tuple(ImageRecord(s.image_id, f"{s.image_id}.jpg", width, height,
                                             tuple(s.ground_truth)) for s in scenes))


def predictions_of(scenes):
    return {s.image_id: list(s.detections) for s in scenes}


def grid_scene(rng, image_id, classes=6):
    """GT boxes in separate 20x20 cells, so no detection overlaps two of them."""
    cells = rng.permutation(15)[:int(rng.integers(0, 7))]
    gts, dets = [], []
    for cell in cells:
        cx, cy = int(cell % 5) * 20, int(cell // 5) * 20
        x0, y0 = cx + int(rng.integers(2, 5)), cy + int(rng.integers(2, 5))
        x1, y1 = x0 + int(rng.integers(8, 12)), y0 + int(rng.integers(8, 12))
        class_id = int(rng.integers(classes))
        gts.append(ann(class_id, x0, y0, x1, y1))
        roll = rng.random()
        if roll < 0.15:
            continue
        shifted = [v + int(rng.integers(-2, 3)) for v in (x0, y0, x1, y1)]
        pred = int(rng.integers(classes)) if roll > 0.9 else class_id
        dets.append(det(pred, float(rng.uniform(0.05, 1.0)), *shifted))
    for cell in sorted(set(range(15)) - set(int(c) for c in cells))[:int(rng.integers(0, 2))]:
        cx, cy = int(cell % 5) * 20, int(cell // 5) * 20
        dets.append(det(int(rng.integers(classes)), float(rng.uniform(0.05, 1.0)), cx + 3, cy + 3, cx + 12, cy + 12))
    return Scene(image_id, tuple(gts), tuple(dets))


def test_match_greedy_by_confidence():
    gts = [ann(0, 0, 0, 10, 10)]
    dets = [det(0, 0.6, 0, 0, 10, 10), det(0, 0.9, 0, 0, 10, 9)]
    outcome = match_detections(gts, dets, 0.5)
    assert outcome.order == (1, 0)
    assert outcome.flags == (True, False)
    assert outcome.matched == (0, None)
    assert (outcome.tp_count, outcome.fp_count, outcome.fn_count) == (1, 1, 0)


def test_match_picks_best_overlap():
    gts = [ann(0, 0, 0, 10, 10), ann(0, 2, 0, 12, 10)]
    outcome = match_detections(gts, [det(0, 0.8, 2, 0, 12, 10)], 0.5)
    assert outcome.matched == (1,)
    assert outcome.fn_count == 1


def test_match_threshold_is_inclusive():
    outcome = match_detections([ann(0, 0, 0, 10, 10)], [det(0, 0.8, 0, 0, 10, 7)], 0.7)
    assert outcome.flags == (True,)


def test_match_respects_class():
    gts = [ann(0, 0, 0, 10, 10)]
    dets = [det(1, 0.8, 0, 0, 10, 10)]
    assert match_detections(gts, dets, 0.5).flags == (False,)
    assert match_detections(gts, dets, 0.5, class_aware=False).flags == (True,)


def test_match_rejects_bad_threshold():
    with pytest.raises(MetricError):
        match_detections([], [], 0.0)


def _max_matching(gts, dets, thr):
    edges = [[j for j, g in enumerate(gts) if g.class_id == d.class_id and iou(d.box, g.box) >= thr]
             for d in dets]
    owner = {}

    def augment(i, seen):
        for j in edges[i]:
            if j in seen:
                continue
            seen.add(j)
            if j not in owner or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, set()) for i in range(len(dets)))


def _random_box(rng):
    x0, y0 = int(rng.integers(0, 20)), int(rng.integers(0, 20))
    return x0, y0, x0 + int(rng.integers(3, 11)), y0 + int(rng.integers(3, 11))


def test_greedy_never_beats_exhaustive_matching():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        gts = [ann(int(rng.integers(2)), *_random_box(rng)) for _ in range(int(rng.integers(0, 7)))]
        dets = [det(int(rng.integers(2)), float(rng.random()), *_random_box(rng))
                for _ in range(int(rng.integers(0, 9)))]
        outcome = match_detections(gts, dets, 0.5)
        assert outcome.tp_count <= _max_matching(gts, dets, 0.5)
        assert outcome.tp_count + outcome.fn_count == len(gts)
        counts = CountsPerClass(0, outcome.tp_count, outcome.fp_count, outcome.fn_count)
        assert precision(counts) == (outcome.tp_count / len(dets) if dets else 1.0)
        assert recall(counts) == (outcome.tp_count / len(gts) if gts else 1.0)


def test_empty_denominators():
    assert precision(CountsPerClass(0)) == 1.0
    assert recall(CountsPerClass(0)) == 1.0
    assert precision(CountsPerClass(0, tp=1, fp=3)) == 0.25
    assert recall(CountsPerClass(0, tp=1, fn=1)) == 0.5


def test_pr_curve_pools_images_by_confidence():
    scenes = [Scene("a", (ann(0, 0, 0, 10, 10),), (det(0, 0.9, 0, 0, 10, 10), det(0, 0.3, 20, 20, 30, 30))),
              Scene("b", (ann(0, 0, 0, 10, 10),), (det(0, 0.6, 0, 0, 10, 10),))]
    curve = pr_curve(scenes, 0, 0.5)
    assert curve.confidences == (0.9, 0.6, 0.3)
    assert curve.points == ((0.5, 1.0), (1.0, 1.0), (1.0, 2 / 3))
    assert curve.n_gt == 2


def test_average_precision_all_point():
    # TP, FP, TP over 3 ground truths: envelope 1, 2/3 at the two hits.
    curve = PRCurve(0, 0.5, ((1 / 3, 1.0), (1 / 3, 0.5), (2 / 3, 2 / 3)), (0.9, 0.8, 0.7), 3)
    assert average_precision(curve, "all_point") == pytest.approx((1 + 2 / 3) / 3)


def test_average_precision_edge_cases():
    assert average_precision(PRCurve(0, 0.5, (), (), 0)) is None
    assert average_precision(PRCurve(0, 0.5, (), (), 4)) == 0.0
    with pytest.raises(MetricError):
        average_precision(PRCurve(0, 0.5, (), (), 1), "eleven_point")


def test_average_precision_101_point():
    perfect = PRCurve(0, 0.5, ((0.5, 1.0), (1.0, 1.0)), (0.9, 0.8), 2)
    assert average_precision(perfect, "101_point") == 1.0
    half = PRCurve(0, 0.5, ((0.5, 1.0),), (0.9,), 2)
    assert average_precision(half, "101_point") == pytest.approx(51 / 101)


def test_published_map_fixture(map9733_scenes, taxonomy):
    assert map_at(map9733_scenes, taxonomy, 0.5) == pytest.approx(5.84 / 6)
    assert round(map_at(map9733_scenes, taxonomy, 0.5), 4) == 0.9733
    counts = counts_at(map9733_scenes, taxonomy, 0.5, 0.5)
    assert (counts[1].tp, counts[1].fp, counts[1].fn) == (23, 0, 2)


def test_ground_truth_replay_scores_one(map9733_scenes, taxonomy):
    scenes = [Scene(s.image_id, s.ground_truth,
                    tuple(Detection(g.class_id, g.box, 1.0) for g in s.ground_truth)) for s in map9733_scenes]
    report = evaluate(manifest_of(scenes), predictions_of(scenes), taxonomy)
    assert report.precision == report.recall == report.map50 == report.map50_95 == 1.0
    assert report.acceptable


def test_empty_predictions_score_zero(map9733_scenes, taxonomy):
    report = evaluate(manifest_of(map9733_scenes), {}, taxonomy)
    assert report.recall == 0.0
    assert report.map50 == 0.0 and report.map50_95 == 0.0
    assert not report.acceptable


def test_map_range_on_iou_point_seven(taxonomy):
    scenes = [Scene("a", (ann(0, 0, 0, 10, 10),), (det(0, 0.9, 0, 0, 10, 7),))]
    value, per_threshold = map_range(scenes, taxonomy)
    assert per_threshold == (1.0,) * 5 + (0.0,) * 5
    assert value == 0.5


def test_map_range_needs_ten_thresholds(taxonomy):
    with pytest.raises(MetricError):
        map_range([], taxonomy, (0.5, 0.75))


def test_map_undefined_without_ground_truth(taxonomy):
    with pytest.raises(MetricError):
        map_at([Scene("a", (), (det(0, 0.9, 0, 0, 5, 5),))], taxonomy, 0.5)


def test_ap_non_increasing_over_thresholds(taxonomy):
    rng = np.random.default_rng(5)
    scenes = [grid_scene(rng, f"img{i:03d}") for i in range(120)]
    report = evaluate(manifest_of(scenes), predictions_of(scenes), taxonomy)
    for values in report.ap.values():
        present = [v for v in values if v is not None]
        assert all(a >= b for a, b in zip(present, present[1:]))
    assert abs(report.map50_95 - sum(report.per_threshold) / 10) <= 1e-12
    assert report.thresholds == settings.IOU_THRESHOLDS


def _rotate_scene(scene):
    gts = tuple(Annotation(g.class_id, rotate_box(g.box, 90, (W, H))[0]) for g in scene.ground_truth)
    dets = tuple(Detection(d.class_id, rotate_box(d.box, 90, (W, H))[0], d.confidence) for d in scene.detections)
    return Scene(scene.image_id, gts, dets)


def test_rotation_leaves_report_unchanged(taxonomy):
    rng = np.random.default_rng(9)
    scenes = [grid_scene(rng, f"img{i:03d}") for i in range(60)]
    rotated = [_rotate_scene(s) for s in scenes]
    before = evaluate(manifest_of(scenes), predictions_of(scenes), taxonomy)
    after = evaluate(manifest_of(rotated, H, W), predictions_of(rotated), taxonomy)
    assert before == after


def _scale_scene(scene, k):
    return Scene(scene.image_id,
                 tuple(Annotation(a.class_id, scale_box(a.box, k)) for a in scene.ground_truth),
                 tuple(Detection(d.class_id, scale_box(d.box, k), d.confidence) for d in scene.detections))


@pytest.mark.parametrize("k", [2, 3, 7])
def test_scaling_leaves_report_unchanged(taxonomy, k):
    rng = np.random.default_rng(21)
    scenes = [grid_scene(rng, f"img{i:03d}") for i in range(60)]
    scaled = [_scale_scene(s, k) for s in scenes]
    before = evaluate(manifest_of(scenes), predictions_of(scenes), taxonomy)
    after = evaluate(manifest_of(scaled, W * k, H * k), predictions_of(scaled), taxonomy)
    assert before == after


def test_counts_at_true_negatives(taxonomy):
    scenes = [Scene("a", (ann(0, 0, 0, 10, 10),), (det(0, 0.9, 0, 0, 10, 10), det(1, 0.4, 20, 20, 30, 30))),
              Scene("b", (), ())]
    counts = counts_at(scenes, taxonomy, 0.5, 0.5)
    assert counts[0] == CountsPerClass(0, tp=1, fp=0, fn=0, tn_images=1)
    # The class-1 detection is below the operating point.
    assert counts[1] == CountsPerClass(1, tp=0, fp=0, fn=0, tn_images=2)


def test_confusion_matrix(taxonomy):
    scenes = [Scene("a", (ann(0, 0, 0, 10, 10), ann(2, 40, 40, 50, 50), ann(3, 20, 0, 30, 10)),
                    (det(1, 0.9, 0, 0, 10, 10), det(2, 0.8, 40, 40, 50, 50), det(4, 0.7, 70, 0, 80, 10),
                     det(3, 0.2, 20, 0, 30, 10)))]
    confusion = confusion_matrix(scenes, taxonomy, 0.5, 0.5)
    matrix = confusion.as_array()
    assert matrix[0, 1] == 1 and matrix[2, 2] == 1
    assert matrix.sum() == 2
    assert confusion.missed == (0, 0, 0, 1, 0, 0)
    assert confusion.ghost == (0, 0, 0, 0, 1, 0)
    text = render_confusion(confusion, taxonomy)
    assert text.splitlines()[0].split()[-1] == "(missed)"
    assert text.splitlines()[-1].startswith("(ghost)")


def test_build_scenes_rejects_unknown_ids(taxonomy):
    manifest = manifest_of([Scene("a", (), ())])
    with pytest.raises(PredictionError) as err:
        build_scenes(manifest, {"zzz": []})
    assert err.value.offenders == ["zzz"]


def test_eval_config_validation():
    with pytest.raises(MetricError):
        EvalConfig(iou_threshold=1.5)
    with pytest.raises(MetricError):
        EvalConfig(interpolation="voc07")


def test_evaluate_on_subset(map9733_scenes, taxonomy):
    manifest = manifest_of(map9733_scenes)
    ids = [s.image_id for s in map9733_scenes if s.image_id.startswith("c1_")]
    report = evaluate(manifest, predictions_of(map9733_scenes), taxonomy, image_ids=ids)
    assert report.map50 == pytest.approx(0.92)
    assert report.ap[0] == (None,) * 10


def test_report_serialization(map9733_scenes, taxonomy):
    report = evaluate(manifest_of(map9733_scenes), predictions_of(map9733_scenes), taxonomy)
    data = report_to_dict(report, taxonomy)
    assert data["schema_version"] == settings.SCHEMA_VERSION
    assert [c["name"] for c in data["classes"]] == taxonomy.names
    assert data["classes"][1]["ap50"] == pytest.approx(0.92)
    assert data["confusion"]["missed"][1] == 2
    rows = report_rows(data)
    assert rows[1][:5] == [1, "canker", 23, 0, 2]

    text = render_report(data)
    assert text.splitlines()[0] == "Precision      1.0000"
    assert "mAP@.5         0.9733" in text
    assert "Acceptable     yes (mAP@.5 >= 0.9)" in text
