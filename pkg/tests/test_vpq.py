import math

import numpy as np
import pytest

from cases import CLASSES, random_instance, registry_for, sequence
from segassoc.core import PanopticMap, binary_iou
from segassoc.errors import SizeError, WindowError
from segassoc.synth import SceneConfig, generate_scene
from segassoc.vpq import (
    PredictionSequence,
    VpqReport,
    format_table,
    mean_reports,
    tc_metric,
    vpq_oracle,
    vpq_report,
    vpq_window,
)


def same(a, b):
    return all((math.isnan(x) and math.isnan(y)) or x == y for x, y in zip(a, b))


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SceneConfig(width=32, height=32, num_frames=8, num_things=3, seed=2))


def gt_as_pred(sample):
    return PredictionSequence(list(sample.panoptic), sample.registry)


def switch_ids(sample, track, start, new_id):
    """Prediction equal to gt except ``track`` is relabeled ``new_id`` from ``start`` on."""
    maps = []
    for t, p in enumerate(sample.panoptic):
        ins = p.instance.copy()
        if t >= start:
            ins[ins == track] = new_id
        maps.append(PanopticMap(p.semantic, ins))
    cls = sample.registry.class_of(track)
    entries = list(sample.registry.entries) + [(new_id, cls, True)]
    from segassoc.core import SegmentRegistry
    return PredictionSequence(maps, SegmentRegistry(tuple(entries)))


def test_perfect_prediction(scene):
    for k in (0, 1, 3, 7):
        assert vpq_window(gt_as_pred(scene), scene, k) == (1.0, 1.0, 1.0)


def test_single_segment_iou():
    classes = {1000: 2, 9: 9}
    gt = sequence([[[1000, 1000, 1000, 1000, 1000, 9, 9, 9, 9, 9]]], classes)
    pred = sequence([[[1000, 1000, 1000, 9, 9, 9, 9, 9, 9, 9]]], classes)
    vpq, th, st = vpq_window(pred, gt, 0, void_class=9)
    assert vpq == pytest.approx(0.6, abs=1e-15) and th == vpq and math.isnan(st)


def test_id_swap_zeroes_class():
    a = [[1000, 1000, 1001, 1001], [0, 0, 0, 0]]
    b = [[1001, 1001, 1000, 1000], [0, 0, 0, 0]]
    gt = sequence([a, a])
    pred = sequence([a, b])
    # each predicted tube overlaps its gt tube in one frame of two: IoU 1/3
    tube = lambda seq, tid: np.concatenate([m.instance == tid for m in seq.panoptic])  # noqa: E731
    assert binary_iou(tube(gt, 1000), tube(pred, 1000)) == pytest.approx(1 / 3)
    vpq, th, st = vpq_window(pred, gt, 1)
    assert th == 0.0 and st == 1.0 and vpq == 0.5
    assert vpq_oracle(pred, gt, 1) == (vpq, th, st)


def test_errors(scene):
    pred = gt_as_pred(scene)
    with pytest.raises(ValueError):
        vpq_window(PredictionSequence(pred.panoptic[:-1], pred.registry), scene, 0)
    with pytest.raises(WindowError):
        vpq_window(pred, scene, len(scene))
    with pytest.raises(WindowError):
        vpq_window(pred, scene, -1)
    with pytest.raises(ValueError):
        vpq_report(pred, scene, [])


def test_report_consistency(scene):
    pred = switch_ids(scene, 1001, 3, 1900)
    rep = vpq_report(pred, scene, [0, 2, 4])
    for i in range(3):
        assert rep.average[i] == math.fsum(rep.per_window[k][i] for k in (0, 2, 4)) / 3
    single = vpq_report(pred, scene, [0])
    assert single.average == single.per_window[0]
    assert VpqReport.from_json(rep.to_json()) == rep


def test_perfect_report_all_ones(scene):
    rep = vpq_report(gt_as_pred(scene), scene, [0, 3, 7])
    assert all(v == (1.0, 1.0, 1.0) for v in rep.per_window.values()) and rep.average == (1, 1, 1)


def test_oracle_equivalence_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred, gt = random_instance(rng)
        for k in (0, 1, 2):
            assert same(vpq_window(pred, gt, k), vpq_oracle(pred, gt, k))


def test_oracle_basics():
    a = [[1000, 1001], [0, 1]]
    gt = sequence([a, a])
    assert vpq_oracle(gt, gt, 1) == (1.0, 1.0, 1.0)
    empty = sequence([[[0, 0], [0, 0]]] * 2)
    only_things = sequence([[[1000, 1000], [1001, 1001]]] * 2)
    vpq, th, st = vpq_oracle(empty, only_things, 0)
    assert th == 0.0


def test_oracle_size_limit():
    ids = [0, 1, 1000, 1001, 1002, 1003]
    classes = dict(CLASSES)
    classes[1004] = 2
    big = sequence([[ids + [1004]]], classes)
    with pytest.raises(SizeError):
        vpq_oracle(big, big, 0)


def test_monotone_under_corruption(scene):
    rng = np.random.default_rng(1)
    things = [e.track_id for e in scene.registry if e.is_thing]
    for _ in range(10):
        pred = switch_ids(scene, int(rng.choice(things)), int(rng.integers(1, len(scene))), 1900)
        for k in (1, 3, 5):
            assert vpq_window(pred, scene, k)[0] <= 1.0


def test_window_nesting(scene):
    pred = switch_ids(scene, 1000, 4, 1900)
    scores = [vpq_window(pred, scene, k)[0] for k in (0, 2, 4, 7)]
    assert scores == sorted(scores, reverse=True)
    assert scores[0] == 1.0 and scores[-1] < 1.0


def test_consecutive_k_not_monotone(scene):
    # a 3/3 split in a six-frame window has tube IoU exactly 0.5 and fails the
    # strict threshold, while the seven-frame windows still match at 4/7
    pred = switch_ids(scene, 1000, 4, 1900)
    assert vpq_window(pred, scene, 5)[0] < vpq_window(pred, scene, 6)[0]


def test_relabel_invariance(scene):
    pred = switch_ids(scene, 1001, 2, 1900)
    mapping = {1000: 1500, 1001: 1501, 1002: 1502, 1900: 1503}
    maps = []
    for p in pred.panoptic:
        ins = p.instance.copy()
        for a, b in mapping.items():
            ins[p.instance == a] = b
        maps.append(PanopticMap(p.semantic, ins))
    entries = [(mapping.get(e.track_id, e.track_id), e.class_id, e.is_thing) for e in pred.registry]
    from segassoc.core import SegmentRegistry
    relabeled = PredictionSequence(maps, SegmentRegistry(tuple(entries)))
    assert vpq_report(relabeled, scene, [0, 3]) == vpq_report(pred, scene, [0, 3])


def test_stride(scene):
    pred = switch_ids(scene, 1000, 1, 1900)
    # with stride 2 only frames 0, 2, 4, 6 are annotated, so the switch at frame 1
    # is a full-window switch from frame 2 on
    assert vpq_window(pred, scene, 0, stride=2)[0] == 1.0
    assert vpq_window(pred, scene, 3, stride=2)[0] < 1.0
    with pytest.raises(WindowError):
        vpq_window(pred, scene, 4, stride=2)


def test_mean_reports():
    a = VpqReport({0: (1.0, 1.0, 1.0)}, (1.0, 1.0, 1.0), [0])
    b = VpqReport({0: (0.5, float("nan"), 0.5)}, (0.5, float("nan"), 0.5), [0])
    m = mean_reports([a, b])
    assert m.per_window[0] == (0.75, 1.0, 0.75)


def test_format_table_columns(scene):
    rep = vpq_report(gt_as_pred(scene), scene, [0, 1, 2, 3])
    text = format_table({"gt": rep}, "method")
    header = text.splitlines()[0]
    assert [h.strip() for h in header.split("|")][1:] == ["k = 0", "k = 1", "k = 2", "k = 3", "VPQ"]
    assert "100.0 / 100.0 / 100.0" in text


# temporal consistency

def test_tc_frozen():
    a = [[0, 1000, 1000], [0, 0, 1]]
    seq = sequence([a, a, a])
    assert tc_metric(seq, [np.zeros((2, 3, 2))] * 2) == 1.0


def test_tc_alternating():
    a = [[1000, 1000, 1001, 1001]] * 2
    b = [[1001, 1001, 1000, 1000]] * 2
    seq = sequence([a, b, a])
    assert tc_metric(seq, [np.zeros((2, 4, 2))] * 2) == 0.0


def test_tc_half_overlap():
    a = [[1000, 1000, 1000, 1001, 1001, 1001]] * 2
    b = [[1001, 1000, 1000, 1000, 1001, 1001]] * 2
    seq = sequence([a, b])
    assert tc_metric(seq, [np.zeros((2, 6, 2))]) == pytest.approx(2 / 3, abs=1e-15)


def test_tc_follows_flow(scene):
    assert tc_metric(gt_as_pred(scene), scene.flows) > 0.9


def test_tc_length_check():
    seq = sequence([[[0, 0], [0, 0]]] * 3)
    with pytest.raises(ValueError):
        tc_metric(seq, [np.zeros((2, 2, 2))])


def test_registry_helper():
    reg = registry_for({0: 0, 1000: 2})
    assert reg.thing_classes == [2] and reg.stuff_classes == [0]
