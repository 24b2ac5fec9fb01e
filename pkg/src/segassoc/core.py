"""Panoptic data model and dense-mask algebra.

Conventions used across the package:

* a logit volume is an ``(N, H, W)`` float array whose channel order is the
  order of the :class:`SegmentRegistry` entries;
* a soft-mask volume is the channel softmax of a logit volume;
* a feature map is a ``(D, H, W)`` float array;
* masks are boolean ``(H, W)`` arrays, tubes are ``(T, H, W)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Tuple

import numpy as np

from .errors import (
    ConsistencyError,
    DegenerateEmbeddingError,
    EmptySegmentError,
    NumericError,
    UndefinedDiceError,
)


class RegistryEntry(NamedTuple):
    track_id: int
    class_id: int
    is_thing: bool


@dataclass(frozen=True)
class SegmentRegistry:
    """Ordered list of every segment a video can contain.

    Stuff entries are tracked by class, so their ``track_id`` equals their
    ``class_id``. The entry order fixes the logit channel order.
    """

    entries: Tuple[RegistryEntry, ...]

    def __post_init__(self):
        entries = tuple(RegistryEntry(int(t), int(c), bool(th)) for t, c, th in self.entries)
        object.__setattr__(self, "entries", entries)
        ids = [e.track_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ConsistencyError(f"duplicate track ids in registry: {ids}")
        thing_classes = {e.class_id for e in entries if e.is_thing}
        stuff_classes = {e.class_id for e in entries if not e.is_thing}
        if thing_classes & stuff_classes:
            raise ConsistencyError(
                f"classes used as both thing and stuff: {sorted(thing_classes & stuff_classes)}")
        for e in entries:
            if not e.is_thing and e.track_id != e.class_id:
                raise ConsistencyError(
                    f"stuff entry must have track_id == class_id, got {e}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def track_ids(self) -> List[int]:
        return [e.track_id for e in self.entries]

    def index_of(self, track_id: int) -> int:
        for i, e in enumerate(self.entries):
            if e.track_id == track_id:
                return i
        raise ConsistencyError(f"track id {track_id} not in registry")

    def class_of(self, track_id: int) -> int:
        return self.entries[self.index_of(track_id)].class_id

    def is_thing_class(self, class_id: int) -> bool:
        for e in self.entries:
            if e.class_id == class_id:
                return e.is_thing
        raise ConsistencyError(f"class id {class_id} not in registry")

    @property
    def thing_classes(self) -> List[int]:
        return sorted({e.class_id for e in self.entries if e.is_thing})

    @property
    def stuff_classes(self) -> List[int]:
        return sorted({e.class_id for e in self.entries if not e.is_thing})

    def to_json(self) -> list:
        return [[e.track_id, e.class_id, e.is_thing] for e in self.entries]

    @classmethod
    def from_json(cls, data: Iterable) -> "SegmentRegistry":
        return cls(tuple(RegistryEntry(int(t), int(c), bool(th)) for t, c, th in data))


@dataclass(frozen=True, eq=False)
class PanopticMap:
    """Per-pixel (class id, track id) labeling of one frame."""

    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        sem = np.array(self.semantic, dtype=np.int32)
        ins = np.array(self.instance, dtype=np.int32)
        if sem.shape != ins.shape or sem.ndim != 2:
            raise ConsistencyError(
                f"semantic {sem.shape} and instance {ins.shape} must be equal 2-D shapes")
        sem.setflags(write=False)
        ins.setflags(write=False)
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", ins)
        object.__setattr__(self, "_cache", {})

    @property
    def shape(self) -> Tuple[int, int]:
        return self.semantic.shape

    def __eq__(self, other):
        if not isinstance(other, PanopticMap):
            return NotImplemented
        return (np.array_equal(self.semantic, other.semantic)
                and np.array_equal(self.instance, other.instance))

    def track_classes(self) -> Dict[int, int]:
        """Map each track id in the frame to its class, checking uniqueness."""
        if "classes" in self._cache:
            return self._cache["classes"]
        pairs = np.unique(np.stack([self.instance.ravel(), self.semantic.ravel()]), axis=1)
        out: Dict[int, int] = {}
        for tid, cid in pairs.T:
            tid, cid = int(tid), int(cid)
            if tid in out and out[tid] != cid:
                raise ConsistencyError(f"track {tid} carries classes {out[tid]} and {cid}")
            out[tid] = cid
        self._cache["classes"] = out
        return out

    def track_ids(self) -> List[int]:
        return sorted(self.track_classes())

    def class_ids(self) -> List[int]:
        return sorted(set(self.track_classes().values()))


@dataclass
class LossResult:
    """Scalar loss plus gradients keyed by input name."""

    value: float
    gradients: Dict[str, np.ndarray] = field(default_factory=dict)

    def __add__(self, other: "LossResult") -> "LossResult":
        grads = {k: v.copy() for k, v in self.gradients.items()}
        for k, g in other.gradients.items():
            grads[k] = grads[k] + g if k in grads else g.copy()
        return LossResult(self.value + other.value, grads)

    def scaled(self, weight: float) -> "LossResult":
        return LossResult(weight * self.value, {k: weight * g for k, g in self.gradients.items()})


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the leading channel axis."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax_channels received non-finite logits")
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_backward(soft: np.ndarray, grad_soft: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of :func:`softmax_channels`."""
    return soft * (grad_soft - (grad_soft * soft).sum(axis=0, keepdims=True))


def mask_pool(features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean feature vector over the set pixels of ``mask``.

    Args:
      features: ``(D, H, W)`` feature map.
      mask: ``(H, W)`` binary mask.

    Returns:
      ``(D,)`` pooled vector, not normalized.
    """
    mask = np.asarray(mask, dtype=bool)
    if features.shape[1:] != mask.shape:
        raise ValueError(f"feature map {features.shape} and mask {mask.shape} disagree")
    count = int(mask.sum())
    if count == 0:
        raise EmptySegmentError("cannot pool over an empty mask")
    return features[:, mask].sum(axis=1) / count


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.dot(v, v))
    if norm == 0.0:
        raise DegenerateEmbeddingError("cannot normalize a zero vector")
    return v / norm


def normalize_backward(v: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. ``v / |v|`` back to ``v`` (last axis)."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    unit = v / norm
    radial = (grad_unit * unit).sum(axis=-1, keepdims=True)
    return (grad_unit - radial * unit) / norm


def normalize_pixels(features: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """L2-normalize every pixel's feature vector of a ``(D, H, W)`` map."""
    norm = np.sqrt((features * features).sum(axis=0, keepdims=True))
    return features / np.maximum(norm, eps)


def dice(p: np.ndarray, q: np.ndarray) -> float:
    """Soft dice coefficient ``2 sum(p q) / (sum p^2 + sum q^2)``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"dice shapes disagree: {p.shape} vs {q.shape}")
    den = float((p * p).sum() + (q * q).sum())
    if den == 0.0:
        raise UndefinedDiceError("dice of two all-zero inputs is undefined")
    return 2.0 * float((p * q).sum()) / den


def binary_iou(a: np.ndarray, b: np.ndarray, empty_value: float = 0.0) -> float:
    """Intersection over union of two binary arrays.

    ``empty_value`` is returned when both inputs are empty.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"iou shapes disagree: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return empty_value
    return int(np.logical_and(a, b).sum()) / union


def extract_masks(panoptic: PanopticMap, registry: SegmentRegistry) -> List[Tuple[int, np.ndarray]]:
    """One binary mask per registry entry present in the frame, in registry order."""
    known = set(registry.track_ids)
    present = set(panoptic.track_ids())
    unknown = present - known
    if unknown:
        raise ConsistencyError(f"track ids {sorted(unknown)} absent from registry")
    classes = panoptic.track_classes()
    out = []
    for e in registry:
        if e.track_id in present:
            if classes[e.track_id] != e.class_id:
                raise ConsistencyError(
                    f"track {e.track_id} labeled class {classes[e.track_id]}, "
                    f"registry says {e.class_id}")
            out.append((e.track_id, panoptic.instance == e.track_id))
    return out


def class_masks(panoptic: PanopticMap) -> List[Tuple[int, np.ndarray]]:
    """Union mask of every semantic class present, ascending class id."""
    return [(c, panoptic.semantic == c) for c in panoptic.class_ids()]


def onehot_channels(panoptic: PanopticMap, registry: SegmentRegistry) -> np.ndarray:
    """Ground-truth segment channel volume ``(N, H, W)`` in registry order."""
    out = np.zeros((len(registry),) + panoptic.shape)
    for tid, m in extract_masks(panoptic, registry):
        out[registry.index_of(tid)][m] = 1.0
    return out
