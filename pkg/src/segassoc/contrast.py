"""Segment-level temporal correspondence via an NT-Xent contrastive loss.

Each frame of a training pair becomes a graph whose nodes are segment
embeddings (mask-pooled, L2-normalized features). The same segment in the two
frames forms a positive pair; every other node is a negative. Two graph views
exist: ``INSTANCE`` (one node per track, stuff tracked by class) and
``SEMANTIC`` (one node per class, pooled over the class union mask).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    LossResult,
    PanopticMap,
    SegmentRegistry,
    class_masks,
    extract_masks,
    l2_normalize,
    mask_pool,
    normalize_backward,
    normalize_pixels,
)
from .errors import InsufficientBatchError

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.5
MODES = ("simclr", "strict_eq2")


class GraphView(enum.Enum):
    INSTANCE = "inst"
    SEMANTIC = "sem"


@dataclass
class ContrastBatch:
    """Unit embeddings of both frames plus the positive pairing.

    ``raw_*`` hold the pooled vectors before the final normalization and
    ``masks_*`` the node masks; both are optional and only needed to chain
    gradients back to a feature map.
    """

    emb_t: np.ndarray
    emb_t2: np.ndarray
    pairing: List[Tuple[int, int]]
    temperature: float = DEFAULT_TEMPERATURE
    ids_t: List[int] = field(default_factory=list)
    ids_t2: List[int] = field(default_factory=list)
    raw_t: Optional[np.ndarray] = None
    raw_t2: Optional[np.ndarray] = None
    masks_t: Optional[List[np.ndarray]] = None
    masks_t2: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        self.emb_t = np.atleast_2d(np.asarray(self.emb_t, dtype=np.float64))
        self.emb_t2 = np.atleast_2d(np.asarray(self.emb_t2, dtype=np.float64))
        self.pairing = [(int(i), int(j)) for i, j in self.pairing]
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if len(self.pairing) < 2:
            raise InsufficientBatchError(
                f"need at least 2 positive pairs, got {len(self.pairing)}")
        left = [i for i, _ in self.pairing]
        right = [j for _, j in self.pairing]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise ValueError("an embedding appears in more than one positive pair")
        if max(left) >= len(self.emb_t) or max(right) >= len(self.emb_t2) or min(left + right) < 0:
            raise ValueError("pairing index out of range")

    @property
    def num_pairs(self) -> int:
        return len(self.pairing)

    def stacked(self) -> np.ndarray:
        return np.vstack([self.emb_t, self.emb_t2])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors."""
    return float(np.dot(a, b))


def _similarity_matrix(e: np.ndarray) -> np.ndarray:
    # elementwise product + last-axis sum: each entry depends only on its two rows
    return (e[:, None, :] * e[None, :, :]).sum(axis=-1)


def _candidates(anchor: int, n_t: int, m: int, mode: str) -> np.ndarray:
    cand = np.ones(m, dtype=bool)
    if mode == "simclr":
        cand[anchor] = False
    elif mode == "strict_eq2":
        if anchor < n_t:
            cand[:n_t] = False
        else:
            cand[n_t:] = False
    else:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return cand


def _anchor_term(logits_row: np.ndarray, positive: int, cand: np.ndarray):
    row = logits_row[cand]
    top = row.max()
    lse = top + math.log(math.fsum(np.exp(row - top)))
    probs = np.zeros_like(logits_row)
    probs[cand] = np.exp(row - lse)
    return lse - logits_row[positive], probs


def similarity_loss(sim: np.ndarray, pairing: Sequence[Tuple[int, int]], n_t: int,
                    temperature: float = DEFAULT_TEMPERATURE,
                    mode: str = "simclr") -> Tuple[float, np.ndarray]:
    """Contrastive loss computed from a precomputed similarity matrix.

    ``sim`` is ``(M, M)`` over the stacked nodes of both frames, frame ``t``
    first (``n_t`` rows). Returns the loss and its gradient w.r.t. ``sim``.
    """
    m = sim.shape[0]
    logits = sim / temperature
    grad = np.zeros_like(logits)
    terms = []
    for i, j in pairing:
        for a, p in ((i, n_t + j), (n_t + j, i)):
            term, probs = _anchor_term(logits[a], p, _candidates(a, n_t, m, mode))
            terms.append(term)
            probs[p] -= 1.0
            grad[a] += probs
    n = len(pairing)
    return math.fsum(terms) / (2 * n), grad / (2 * n * temperature)


def pairwise_nt_xent(batch: ContrastBatch, anchor: Tuple[int, int], mode: str = "simclr") -> float:
    """Single anchor term.

    ``anchor`` is ``(frame, index)`` with ``frame`` 0 for ``t`` and 1 for
    ``t + delta``.
    """
    frame, idx = anchor
    n_t = len(batch.emb_t)
    partner = None
    for i, j in batch.pairing:
        if frame == 0 and i == idx:
            a, partner = i, n_t + j
        elif frame == 1 and j == idx:
            a, partner = n_t + j, i
    if partner is None:
        raise ValueError(f"anchor {anchor} has no positive")
    e = batch.stacked()
    logits = _similarity_matrix(e) / batch.temperature
    term, _ = _anchor_term(logits[a], partner, _candidates(a, n_t, len(e), mode))
    return float(term)


def contrastive_loss(batch: ContrastBatch, mode: str = "simclr", wrt_raw: bool = False) -> LossResult:
    """Symmetric NT-Xent over all positive pairs.

    Gradients are returned for ``emb_t`` and ``emb_t2``; with ``wrt_raw``
    also for the pre-normalization vectors ``raw_t`` / ``raw_t2``.
    """
    e = batch.stacked()
    n_t = len(batch.emb_t)
    value, dsim = similarity_loss(_similarity_matrix(e), batch.pairing, n_t,
                                  batch.temperature, mode)
    de = (dsim + dsim.T) @ e
    grads = {"emb_t": de[:n_t], "emb_t2": de[n_t:]}
    if wrt_raw:
        if batch.raw_t is None or batch.raw_t2 is None:
            raise ValueError("batch carries no pre-normalization vectors")
        grads["raw_t"] = normalize_backward(batch.raw_t, grads["emb_t"])
        grads["raw_t2"] = normalize_backward(batch.raw_t2, grads["emb_t2"])
    return LossResult(value, grads)


def _view_nodes(pan: PanopticMap, registry: SegmentRegistry, view: GraphView):
    if view is GraphView.INSTANCE:
        return extract_masks(pan, registry)
    return class_masks(pan)


def build_contrast_batch(pan_t: PanopticMap, pan_t2: PanopticMap, feat_t: np.ndarray,
                         feat_t2: np.ndarray, registry: SegmentRegistry, view: GraphView,
                         temperature: float = DEFAULT_TEMPERATURE,
                         untraceable_negatives: bool = True) -> ContrastBatch:
    """Pool segment embeddings from two feature maps and pair them.

    Per-pixel features are L2-normalized, pooled under each node mask and the
    pooled vector normalized again. Traceable nodes (present in both frames)
    are paired; with ``untraceable_negatives`` nodes seen in a single frame
    stay in that frame's node list as extra negatives.
    """
    if feat_t.shape[1:] != pan_t.shape or feat_t2.shape[1:] != pan_t2.shape:
        raise ValueError("feature maps and panoptic maps must share spatial shape")
    nodes_t = _view_nodes(pan_t, registry, view)
    nodes_t2 = _view_nodes(pan_t2, registry, view)
    shared = set(k for k, _ in nodes_t) & set(k for k, _ in nodes_t2)
    if len(shared) < 2:
        raise InsufficientBatchError(
            f"{view.value} view has {len(shared)} traceable nodes, need at least 2")
    if not untraceable_negatives:
        nodes_t = [(k, m) for k, m in nodes_t if k in shared]
        nodes_t2 = [(k, m) for k, m in nodes_t2 if k in shared]
    unit_t = normalize_pixels(feat_t)
    unit_t2 = normalize_pixels(feat_t2)
    raw_t = np.array([mask_pool(unit_t, m) for _, m in nodes_t])
    raw_t2 = np.array([mask_pool(unit_t2, m) for _, m in nodes_t2])
    ids_t = [k for k, _ in nodes_t]
    ids_t2 = [k for k, _ in nodes_t2]
    pairing = [(ids_t.index(k), ids_t2.index(k)) for k in ids_t if k in shared]
    return ContrastBatch(
        emb_t=np.array([l2_normalize(v) for v in raw_t]),
        emb_t2=np.array([l2_normalize(v) for v in raw_t2]),
        pairing=pairing, temperature=temperature, ids_t=ids_t, ids_t2=ids_t2,
        raw_t=raw_t, raw_t2=raw_t2,
        masks_t=[m for _, m in nodes_t], masks_t2=[m for _, m in nodes_t2])


def _pool_backward(feat: np.ndarray, masks: List[np.ndarray], grad_raw: np.ndarray) -> np.ndarray:
    stack = np.array([m.ravel() for m in masks], dtype=np.float64)  # (K, HW)
    per_node = grad_raw / stack.sum(axis=1, keepdims=True)
    g_unit = per_node.T @ stack
    d = feat.shape[0]
    flat = feat.reshape(d, -1).T
    norm = np.linalg.norm(flat, axis=-1, keepdims=True)
    clipped = np.maximum(norm, 1e-12)
    unit = flat / clipped
    gu = g_unit.T
    radial = (gu * unit).sum(axis=-1, keepdims=True)
    # below the floor the forward pass is a plain scaling
    g = np.where(norm > 1e-12, (gu - radial * unit) / clipped, gu / clipped)
    return g.T.reshape(feat.shape)


def feature_gradients(batch: ContrastBatch, result: LossResult, feat_t: np.ndarray,
                      feat_t2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Chain a contrastive loss result back to the two feature maps."""
    if "raw_t" not in result.gradients:
        raise ValueError("loss result was computed without wrt_raw=True")
    return (_pool_backward(feat_t, batch.masks_t, result.gradients["raw_t"]),
            _pool_backward(feat_t2, batch.masks_t2, result.gradients["raw_t2"]))


def segment_level_loss(sem_batch: Optional[ContrastBatch], inst_batch: Optional[ContrastBatch],
                       mode: str = "simclr", wrt_raw: bool = False) -> LossResult:
    """Semantic-view plus instance-view contrastive loss.

    Either batch may be ``None`` (view disabled or insufficient); gradients are
    keyed ``sem.<name>`` and ``inst.<name>``.
    """
    if sem_batch is None and inst_batch is None:
        raise InsufficientBatchError("both contrastive views are unavailable")
    out = LossResult(0.0, {})
    for name, batch in (("sem", sem_batch), ("inst", inst_batch)):
        if batch is None:
            logger.info("segment loss: %s view skipped", name)
            continue
        res = contrastive_loss(batch, mode, wrt_raw)
        out = out + LossResult(res.value, {f"{name}.{k}": g for k, g in res.gradients.items()})
    return out


def segment_loss_from_features(pan_t: PanopticMap, pan_t2: PanopticMap, feat_t: np.ndarray,
                               feat_t2: np.ndarray, registry: SegmentRegistry,
                               views: Sequence[GraphView] = (GraphView.SEMANTIC, GraphView.INSTANCE),
                               temperature: float = DEFAULT_TEMPERATURE,
                               mode: str = "simclr") -> Tuple[Dict[str, float], np.ndarray, np.ndarray]:
    """Segment loss of a frame pair, chained back to the feature maps.

    Returns per-view values (views that lack two traceable nodes are left out)
    and the gradients w.r.t. ``feat_t`` and ``feat_t2``.
    """
    values: Dict[str, float] = {}
    g_t = np.zeros_like(feat_t)
    g_t2 = np.zeros_like(feat_t2)
    for view in views:
        try:
            batch = build_contrast_batch(pan_t, pan_t2, feat_t, feat_t2, registry, view, temperature)
        except InsufficientBatchError:
            logger.info("segment loss: %s view has fewer than 2 traceable nodes", view.value)
            continue
        res = contrastive_loss(batch, mode, wrt_raw=True)
        a, b = feature_gradients(batch, res, feat_t, feat_t2)
        values[view.value] = res.value
        g_t += a
        g_t2 += b
    if views and not values:
        raise InsufficientBatchError("no contrastive view has two traceable nodes")
    return values, g_t, g_t2
