import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segassoc.core import (
    LossResult,
    PanopticMap,
    RegistryEntry,
    SegmentRegistry,
    binary_iou,
    class_masks,
    dice,
    extract_masks,
    l2_normalize,
    mask_pool,
    normalize_backward,
    onehot_channels,
    softmax_backward,
    softmax_channels,
)
from segassoc.errors import (
    ConsistencyError,
    DegenerateEmbeddingError,
    EmptySegmentError,
    NumericError,
    UndefinedDiceError,
)

REG = SegmentRegistry((RegistryEntry(0, 0, False), RegistryEntry(1, 1, False),
                       RegistryEntry(1000, 2, True), RegistryEntry(1001, 2, True)))


def two_things_on_stuff():
    sem = np.zeros((6, 6), int)
    ins = np.zeros((6, 6), int)
    sem[1:3, 1:3], ins[1:3, 1:3] = 2, 1000
    sem[3:5, 3:6], ins[3:5, 3:6] = 2, 1001
    return PanopticMap(sem, ins)


# softmax

def test_softmax_uniform():
    np.testing.assert_array_equal(softmax_channels(np.zeros((4, 3, 3))), np.full((4, 3, 3), 0.25))


def test_softmax_two_channel_value():
    s = softmax_channels(np.array([10.0, 0.0]).reshape(2, 1, 1))
    assert s[0, 0, 0] == pytest.approx(0.9999546, abs=1e-6)
    assert s[1, 0, 0] == pytest.approx(0.0000454, abs=1e-6)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        softmax_channels(np.array([np.nan, 0.0]).reshape(2, 1, 1))


def test_softmax_large_logits_stable():
    s = softmax_channels(np.array([1000.0, 0.0]).reshape(2, 1, 1))
    assert np.all(np.isfinite(s)) and s[0, 0, 0] == 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4, 5), elements=st.floats(-30, 30)),
       arrays(np.float64, (1, 4, 5), elements=st.floats(-30, 30)))
def test_softmax_sums_and_shift_invariance(logits, shift):
    s = softmax_channels(logits)
    np.testing.assert_allclose(s.sum(axis=0), 1.0, atol=1e-5)
    np.testing.assert_allclose(softmax_channels(logits + shift), s, atol=1e-6)


def test_softmax_backward_matches_jacobian():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 1, 1))
    g = rng.normal(size=(3, 1, 1))
    s = softmax_channels(z)[:, 0, 0]
    jac = np.diag(s) - np.outer(s, s)
    np.testing.assert_allclose(softmax_backward(softmax_channels(z), g)[:, 0, 0], jac @ g[:, 0, 0])


# pooling and normalization

def test_mask_pool_constant_map():
    f = np.full((3, 4, 4), 2.5)
    np.testing.assert_array_equal(mask_pool(f, np.ones((4, 4), bool)), [2.5, 2.5, 2.5])


def test_mask_pool_two_pixels():
    f = np.zeros((2, 2, 2))
    f[:, 0, 0] = (1, 0)
    f[:, 1, 1] = (0, 1)
    m = np.zeros((2, 2), bool)
    m[0, 0] = m[1, 1] = True
    np.testing.assert_array_equal(mask_pool(f, m), [0.5, 0.5])


def test_mask_pool_single_pixel():
    f = np.random.default_rng(1).normal(size=(4, 3, 3))
    m = np.zeros((3, 3), bool)
    m[2, 1] = True
    np.testing.assert_array_equal(mask_pool(f, m), f[:, 2, 1])


def test_mask_pool_empty_raises():
    with pytest.raises(EmptySegmentError):
        mask_pool(np.ones((2, 3, 3)), np.zeros((3, 3), bool))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (3, 4, 4), elements=st.floats(-10, 10)),
       st.floats(-5, 5), st.floats(-5, 5))
def test_mask_pool_linear(f, g, a, b):
    m = np.zeros((4, 4), bool)
    m[1:3, :] = True
    np.testing.assert_allclose(mask_pool(a * f + b * g, m),
                               a * mask_pool(f, m) + b * mask_pool(g, m), atol=1e-6)


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(u), u)
    with pytest.raises(DegenerateEmbeddingError):
        l2_normalize(np.zeros(2))


def test_normalize_backward_is_tangent():
    rng = np.random.default_rng(2)
    v = rng.normal(size=5)
    g = normalize_backward(v, rng.normal(size=5))
    assert abs(np.dot(g, v)) < 1e-12


# dice and iou

def test_dice_examples():
    p = np.array([1.0, 1, 0, 0])
    assert dice(p, p) == 1.0
    assert dice(p, 1 - p) == 0.0
    assert dice(p, np.array([0.0, 1, 1, 0])) == 0.5


def test_dice_all_zero_raises():
    with pytest.raises(UndefinedDiceError):
        dice(np.zeros(4), np.zeros(4))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(0, 1)),
       arrays(np.float64, 12, elements=st.floats(0, 1)))
def test_dice_symmetric_and_bounded(p, q):
    if not (p.any() or q.any()):
        return
    d = dice(p, q)
    assert d == dice(q, p)
    assert 0.0 <= d <= 1.0


def test_binary_iou_examples():
    a = np.zeros((4, 4), bool)
    a[1:3, 0:2] = True
    assert binary_iou(a, a) == 1.0
    assert binary_iou(a, np.roll(a, 2, axis=1)) == 0.0
    assert binary_iou(a, np.roll(a, 1, axis=1)) == pytest.approx(1 / 3)
    assert binary_iou(np.zeros(3), np.zeros(3), empty_value=1.0) == 1.0


def test_binary_iou_shape_mismatch():
    with pytest.raises(ValueError):
        binary_iou(np.zeros(3), np.zeros(4))


# data model

def test_registry_validation():
    with pytest.raises(ConsistencyError):
        SegmentRegistry(((5, 5, False), (5, 6, True)))
    with pytest.raises(ConsistencyError):
        SegmentRegistry(((0, 0, False), (1000, 0, True)))
    with pytest.raises(ConsistencyError):
        SegmentRegistry(((7, 0, False),))
    assert SegmentRegistry.from_json(REG.to_json()) == REG


def test_panoptic_map_copies_and_freezes():
    sem = np.zeros((3, 3), int)
    pan = PanopticMap(sem, sem)
    sem[0, 0] = 9
    assert pan.semantic[0, 0] == 0
    with pytest.raises(ValueError):
        pan.semantic[0, 0] = 1


def test_panoptic_inconsistent_track_class():
    sem = np.array([[2, 3]])
    ins = np.array([[1000, 1000]])
    with pytest.raises(ConsistencyError):
        PanopticMap(sem, ins).track_classes()


def test_extract_masks_single_stuff():
    pan = PanopticMap(np.zeros((4, 4), int), np.zeros((4, 4), int))
    (tid, m), = extract_masks(pan, REG)
    assert tid == 0 and m.all()


def test_extract_masks_partition():
    masks = extract_masks(two_things_on_stuff(), REG)
    assert [t for t, _ in masks] == [0, 1000, 1001]
    total = sum(m.astype(int) for _, m in masks)
    np.testing.assert_array_equal(total, 1)


def test_extract_masks_absent_thing_omitted():
    pan = two_things_on_stuff()
    ins = pan.instance.copy()
    sem = pan.semantic.copy()
    sem[ins == 1000], ins[ins == 1000] = 0, 0
    assert 1000 not in dict(extract_masks(PanopticMap(sem, ins), REG))


def test_extract_masks_unknown_id():
    pan = PanopticMap(np.full((2, 2), 2), np.full((2, 2), 1005))
    with pytest.raises(ConsistencyError):
        extract_masks(pan, REG)


def test_class_masks_union():
    (c0, m0), (c2, m2) = class_masks(two_things_on_stuff())
    assert (c0, c2) == (0, 2) and m2.sum() == 4 + 6


def test_onehot_channels():
    vol = onehot_channels(two_things_on_stuff(), REG)
    assert vol.shape == (4, 6, 6)
    np.testing.assert_array_equal(vol.sum(axis=0), 1.0)
    assert vol[1].sum() == 0


def test_loss_result_add_and_scale():
    a = LossResult(0.2, {"x": np.ones(2)})
    b = LossResult(0.3, {"x": np.ones(2), "y": np.zeros(1)})
    c = (a + b).scaled(2.0)
    assert math.isclose(c.value, 1.0)
    np.testing.assert_array_equal(c.gradients["x"], [4.0, 4.0])
    assert set(c.gradients) == {"x", "y"}
