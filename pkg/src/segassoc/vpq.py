"""Video Panoptic Quality over temporal windows, with an exhaustive-matching
oracle and a flow-based temporal-consistency score.

A window is ``k + 1`` consecutive annotated frames. Inside a window every
track's masks are concatenated into a tube; predicted tubes are matched to
ground-truth tubes of the same class when their tube IoU exceeds 0.5. Each
class scores ``sum(IoU) / (TP + FP/2 + FN/2)``; a window averages the classes
present, and the k-score averages the windows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import PanopticMap, SegmentRegistry, binary_iou, dice
from .errors import SizeError, WindowError
from .pixel import bilinear_warp

DEFAULT_WINDOWS = (0, 5, 10, 15)
IOU_THRESHOLD = 0.5
ORACLE_MAX_TUBES = 6

Triple = Tuple[float, float, float]


@dataclass
class PredictionSequence:
    panoptic: List[PanopticMap]
    registry: SegmentRegistry

    def __len__(self) -> int:
        return len(self.panoptic)


@dataclass
class VpqReport:
    per_window: Dict[int, Triple]
    average: Triple
    window_set: List[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "metric": "VPQ",
            "window_set": list(self.window_set),
            "per_window": {str(k): list(v) for k, v in self.per_window.items()},
            "average": list(self.average),
        }

    @classmethod
    def from_json(cls, data: dict) -> "VpqReport":
        def triple(v):
            return tuple(float("nan") if x is None else float(x) for x in v)
        return cls({int(k): triple(v) for k, v in data["per_window"].items()},
                   triple(data["average"]), [int(k) for k in data["window_set"]])


def _mean(values: Sequence[float]) -> float:
    values = [v for v in values if not math.isnan(v)]
    if not values:
        return float("nan")
    return math.fsum(values) / len(values)


def _check_lengths(pred: PredictionSequence, gt) -> None:
    if len(pred.panoptic) != len(gt.panoptic):
        raise ValueError(
            f"prediction has {len(pred.panoptic)} frames, ground truth {len(gt.panoptic)}")


def _annotated(n: int, stride: int) -> List[int]:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return list(range(0, n, stride))


def _windows(n: int, k: int, stride: int) -> List[List[int]]:
    if k < 0:
        raise WindowError(f"window size must be >= 0, got {k}")
    frames = _annotated(n, stride)
    if k + 1 > len(frames):
        raise WindowError(f"window of {k + 1} frames exceeds {len(frames)} annotated frames")
    return [frames[s:s + k + 1] for s in range(len(frames) - k)]


def _class_tables(pred: PredictionSequence, gt_registry: SegmentRegistry):
    gt_cls = {e.track_id: e.class_id for e in gt_registry}
    pred_cls = {e.track_id: e.class_id for e in pred.registry}
    things = set(gt_registry.thing_classes) | set(pred.registry.thing_classes)
    return gt_cls, pred_cls, things


def _frame_counts(gt: PanopticMap, pred: PanopticMap, void_class: Optional[int]):
    # gt-void pixels are dropped everywhere; pixels predicted as void still
    # count toward the gt area but belong to no predicted segment
    g = gt.instance.ravel().astype(np.int64)
    p = pred.instance.ravel().astype(np.int64)
    p_ok = np.ones(g.shape, dtype=bool)
    if void_class is not None:
        keep = gt.semantic.ravel() != void_class
        g, p = g[keep], p[keep]
        p_ok = pred.semantic.ravel()[keep] != void_class
    inter: Dict[Tuple[int, int], int] = {}
    if p_ok.any():
        pairs, counts = np.unique(np.stack([g[p_ok], p[p_ok]]), axis=1, return_counts=True)
        inter = {(int(a), int(b)): int(c) for (a, b), c in zip(pairs.T, counts)}
    ga, gc = np.unique(g, return_counts=True)
    pa, pc = np.unique(p[p_ok], return_counts=True)
    return inter, dict(zip(ga.tolist(), gc.tolist())), dict(zip(pa.tolist(), pc.tolist()))


def _accumulate(stats):
    inter: Dict[Tuple[int, int], int] = {}
    area_g: Dict[int, int] = {}
    area_p: Dict[int, int] = {}
    for fi, fg, fp in stats:
        for key, v in fi.items():
            inter[key] = inter.get(key, 0) + v
        for key, v in fg.items():
            area_g[key] = area_g.get(key, 0) + v
        for key, v in fp.items():
            area_p[key] = area_p.get(key, 0) + v
    return inter, area_g, area_p


def _score(matched: List[float], tp: int, fp: int, fn: int) -> float:
    return math.fsum(matched) / (tp + 0.5 * fp + 0.5 * fn)


def _subset_means(per_class: Dict[int, float], things) -> Triple:
    classes = sorted(per_class)
    return (_mean([per_class[c] for c in classes]),
            _mean([per_class[c] for c in classes if c in things]),
            _mean([per_class[c] for c in classes if c not in things]))


def _greedy_window(stats, gt_cls, pred_cls) -> Dict[int, float]:
    inter, area_g, area_p = _accumulate(stats)
    per_class: Dict[int, float] = {}
    classes = sorted({gt_cls[g] for g in area_g} | {pred_cls[p] for p in area_p})
    for c in classes:
        gts = sorted(g for g in area_g if gt_cls[g] == c)
        preds = sorted(p for p in area_p if pred_cls[p] == c)
        cands = []
        for g in gts:
            for p in preds:
                i = inter.get((g, p), 0)
                if i:
                    iou = i / (area_g[g] + area_p[p] - i)
                    if iou > IOU_THRESHOLD:
                        cands.append((-iou, g, p))
        cands.sort()
        used_g, used_p, matched = set(), set(), []
        for neg, g, p in cands:
            if g not in used_g and p not in used_p:
                used_g.add(g)
                used_p.add(p)
                matched.append(-neg)
        tp = len(matched)
        per_class[c] = _score(matched, tp, len(preds) - tp, len(gts) - tp)
    return per_class


def vpq_window(pred: PredictionSequence, gt, k: int, stride: int = 1,
               void_class: Optional[int] = None) -> Triple:
    """``(vpq, vpq_thing, vpq_stuff)`` for window size ``k``.

    ``gt`` is any object with ``panoptic`` and ``registry`` attributes (a
    :class:`~segassoc.synth.VideoSample` or a :class:`PredictionSequence`).
    Sub-scores with no class present anywhere are NaN.
    """
    _check_lengths(pred, gt)
    windows = _windows(len(gt.panoptic), k, stride)
    gt_cls, pred_cls, things = _class_tables(pred, gt.registry)
    frames = sorted({f for w in windows for f in w})
    stats = {f: _frame_counts(gt.panoptic[f], pred.panoptic[f], void_class) for f in frames}
    triples = [_subset_means(_greedy_window([stats[f] for f in w], gt_cls, pred_cls), things)
               for w in windows]
    return tuple(_mean([t[i] for t in triples]) for i in range(3))


def vpq_report(pred: PredictionSequence, gt, windows: Sequence[int] = DEFAULT_WINDOWS,
               stride: int = 1, void_class: Optional[int] = None) -> VpqReport:
    if not windows:
        raise ValueError("vpq_report needs at least one window size")
    per = {int(k): vpq_window(pred, gt, k, stride, void_class) for k in windows}
    avg = tuple(_mean([per[k][i] for k in sorted(per)]) for i in range(3))
    return VpqReport(per, avg, sorted(per))


def mean_reports(reports: Sequence[VpqReport]) -> VpqReport:
    """Entry-wise mean of reports sharing one window set."""
    ks = reports[0].window_set
    per = {k: tuple(_mean([r.per_window[k][i] for r in reports]) for i in range(3)) for k in ks}
    avg = tuple(_mean([per[k][i] for k in ks]) for i in range(3))
    return VpqReport(per, avg, list(ks))


def _best_matching(ious: Dict[Tuple[int, int], float], gts: List[int], preds: List[int]):
    best: Tuple[float, List[float]] = (0.0, [])

    def search(i: int, used: frozenset, chosen: List[float]):
        nonlocal best
        if i == len(gts):
            total = math.fsum(chosen)
            if total > best[0] or (total == best[0] and len(chosen) > len(best[1])):
                best = (total, list(chosen))
            return
        search(i + 1, used, chosen)
        for p in preds:
            if p not in used and ious[(gts[i], p)] > IOU_THRESHOLD:
                chosen.append(ious[(gts[i], p)])
                search(i + 1, used | {p}, chosen)
                chosen.pop()

    search(0, frozenset(), [])
    return best[1]


def vpq_oracle(pred: PredictionSequence, gt, k: int, stride: int = 1) -> Triple:
    """Reference VPQ by exhaustive search over one-to-one tube matchings.

    Tubes are rebuilt from concatenated binary masks and scored with
    :func:`binary_iou`, independently of :func:`vpq_window`'s counting path.
    """
    _check_lengths(pred, gt)
    windows = _windows(len(gt.panoptic), k, stride)
    gt_cls, pred_cls, things = _class_tables(pred, gt.registry)
    triples = []
    for w in windows:
        g_tubes = {}
        p_tubes = {}
        for tid in sorted({int(t) for f in w for t in np.unique(gt.panoptic[f].instance)}):
            g_tubes[tid] = np.concatenate([gt.panoptic[f].instance == tid for f in w])
        for tid in sorted({int(t) for f in w for t in np.unique(pred.panoptic[f].instance)}):
            p_tubes[tid] = np.concatenate([pred.panoptic[f].instance == tid for f in w])
        if len(g_tubes) > ORACLE_MAX_TUBES or len(p_tubes) > ORACLE_MAX_TUBES:
            raise SizeError(
                f"oracle limited to {ORACLE_MAX_TUBES} tubes per side, got "
                f"{len(g_tubes)} gt / {len(p_tubes)} predicted")
        per_class = {}
        for c in sorted({gt_cls[g] for g in g_tubes} | {pred_cls[p] for p in p_tubes}):
            gts = [g for g in g_tubes if gt_cls[g] == c]
            preds = [p for p in p_tubes if pred_cls[p] == c]
            ious = {(g, p): binary_iou(g_tubes[g], p_tubes[p])
                    for g, p in itertools.product(gts, preds)}
            matched = _best_matching(ious, gts, preds)
            tp = len(matched)
            per_class[c] = _score(matched, tp, len(preds) - tp, len(gts) - tp)
        triples.append(_subset_means(per_class, things))
    return tuple(_mean([t[i] for t in triples]) for i in range(3))


def tc_metric(pred: PredictionSequence, flows: Sequence[np.ndarray]) -> float:
    """Temporal consistency, implemented variant.

    For each consecutive pair the mask of every predicted track at ``t + 1``
    is warped back to frame ``t`` along ``flows[t]`` and compared with its mask
    at ``t`` by dice, over validly warped pixels only. Per-pair means over
    tracks are averaged over pairs.
    """
    if len(flows) != len(pred.panoptic) - 1:
        raise ValueError(f"{len(flows)} flows for {len(pred.panoptic)} frames")
    pair_scores = []
    for t, flow in enumerate(flows):
        a, b = pred.panoptic[t].instance, pred.panoptic[t + 1].instance
        scores = []
        for tid in sorted(set(np.unique(a).tolist()) | set(np.unique(b).tolist())):
            warped, valid = bilinear_warp((b == tid).astype(np.float64), flow)
            here = (a == tid) * valid
            if not here.any() and not warped.any():
                continue
            scores.append(dice(here, warped))
        if scores:
            pair_scores.append(_mean(scores))
    return _mean(pair_scores)


def _cell(triple: Triple) -> str:
    return " / ".join("  -  " if math.isnan(v) else f"{100 * v:5.1f}" for v in triple)


def format_table(rows: Dict[str, VpqReport], title: str = "") -> str:
    """Plain-text table with one ``VPQ / VPQ^Th / VPQ^St`` cell per window."""
    if not rows:
        return ""
    ks = next(iter(rows.values())).window_set
    headers = [f"k = {k}" for k in ks] + ["VPQ"]
    label_w = max([len(r) for r in rows] + [len(title), 8])
    cell_w = len(_cell((0.0, 0.0, 0.0)))
    lines = []
    head = title.ljust(label_w) + " | " + " | ".join(h.center(cell_w) for h in headers)
    lines.append(head)
    lines.append("-" * len(head))
    for name, rep in rows.items():
        cells = [_cell(rep.per_window[k]) for k in ks] + [_cell(rep.average)]
        lines.append(name.ljust(label_w) + " | " + " | ".join(cells))
    lines.append("cells: VPQ / VPQ^Th / VPQ^St (x100)")
    return "\n".join(lines)
