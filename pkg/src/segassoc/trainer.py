"""Desk-scale siamese trainer for the temporal-correspondence objectives.

The model is deliberately tiny: two 3x3 convolutions with a ReLU between
them turn an RGB + (x, y) encoding of a frame into a per-pixel feature map,
and a 1x1 head maps features to one logit channel per registry entry. Both
frames of a pair go through the same weights. The task loss is per-pixel
cross-entropy against the ground-truth segment channels; the temporal terms
are added with weights ``lambda_segment`` and ``lambda_pixel``. Everything is
backpropagated by hand and optimized with plain gradient descent.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .contrast import GraphView, segment_loss_from_features
from .core import (
    PanopticMap,
    RegistryEntry,
    SegmentRegistry,
    l2_normalize,
    mask_pool,
    normalize_pixels,
    onehot_channels,
)
from .errors import ConfigError, DivergenceError, InsufficientBatchError
from .pixel import (
    downsample_flow,
    downsample_map,
    gt_tubes,
    occlusion_map,
    perturb_flow,
    tube_loss,
    warp_loss,
)
from .synth import THING_TRACK_BASE, SceneConfig, VideoSample, generate_scene, pair_flow
from .vpq import (
    DEFAULT_WINDOWS,
    PredictionSequence,
    VpqReport,
    mean_reports,
    tc_metric,
    vpq_report,
)

logger = logging.getLogger(__name__)

LOSS_NAMES = ("sem", "inst", "warp", "tube")
ALL_LOSSES = frozenset(LOSS_NAMES)
INPUT_CHANNELS = 5
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
TASK_LOSS_LABEL = "per-pixel cross-entropy (stand-in task loss)"


def parse_losses(names: Iterable[str]) -> FrozenSet[str]:
    """Expand ``segment`` / ``pixel`` aliases and validate loss names."""
    out = set()
    for n in names:
        n = n.strip()
        if not n:
            continue
        if n == "segment":
            out |= {"sem", "inst"}
        elif n == "pixel":
            out |= {"warp", "tube"}
        elif n in LOSS_NAMES:
            out.add(n)
        else:
            raise ConfigError(f"unknown loss {n!r}; expected one of {LOSS_NAMES + ('segment', 'pixel')}")
    return frozenset(out)


@dataclass(frozen=True)
class TrainConfig:
    lambda_segment: float = 1.0
    lambda_pixel: float = 1.0
    tau: float = 0.5
    alpha: float = 50.0
    delta_range: Tuple[int, ...] = (-10, 10)
    steps: int = 300
    learning_rate: float = 0.2
    seed: int = 0
    contrast_mode: str = "simclr"
    enabled_losses: FrozenSet[str] = ALL_LOSSES
    feature_dim: int = 16
    warp_reduction: str = "mean"
    downsample: int = 1
    link_threshold: float = 0.5
    flow_noise_std: float = 0.0
    windows: Tuple[int, ...] = DEFAULT_WINDOWS

    def __post_init__(self):
        object.__setattr__(self, "enabled_losses", parse_losses(self.enabled_losses))
        object.__setattr__(self, "delta_range", tuple(int(d) for d in self.delta_range))
        object.__setattr__(self, "windows", tuple(int(k) for k in self.windows))
        self.validate()

    def validate(self) -> None:
        if self.lambda_segment < 0 or self.lambda_pixel < 0:
            raise ConfigError("lambda_segment and lambda_pixel must be >= 0")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.delta_range or 0 in self.delta_range:
            raise ConfigError(f"delta_range must be non-empty and exclude 0, got {self.delta_range}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.contrast_mode not in ("simclr", "strict_eq2"):
            raise ConfigError(f"contrast_mode must be simclr or strict_eq2, got {self.contrast_mode!r}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")

    def baseline(self) -> "TrainConfig":
        """Same run with every temporal loss disabled."""
        return replace(self, enabled_losses=frozenset())

    def to_json(self) -> dict:
        d = asdict(self)
        d["enabled_losses"] = sorted(self.enabled_losses)
        d["delta_range"] = list(self.delta_range)
        d["windows"] = list(self.windows)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["delta_range"] = tuple(d.get("delta_range", (-10, 10)))
        d["windows"] = tuple(d.get("windows", DEFAULT_WINDOWS))
        d["enabled_losses"] = frozenset(d.get("enabled_losses", ALL_LOSSES))
        return cls(**d)


# ---------------------------------------------------------------------------
# model


@dataclass
class ToyModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    registry: SegmentRegistry

    @classmethod
    def init(cls, registry: SegmentRegistry, feature_dim: int, rng: np.random.Generator) -> "ToyModel":
        d, n = feature_dim, len(registry)
        u = lambda *shape: rng.uniform(-0.1, 0.1, size=shape)  # noqa: E731
        return cls(u(d, INPUT_CHANNELS, 3, 3), u(d), u(d, d, 3, 3), u(d), u(n, d), u(n), registry)

    def params(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def with_params(self, params: Dict[str, np.ndarray]) -> "ToyModel":
        return ToyModel(registry=self.registry, **{k: params[k] for k in PARAM_NAMES})

    def num_params(self) -> int:
        return sum(p.size for p in self.params().values())


def encode_frame(frame: np.ndarray) -> np.ndarray:
    """RGB plus normalized (x, y) coordinates, channels first."""
    h, w, _ = frame.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = 2 * xs / (w - 1) - 1
    ys = 2 * ys / (h - 1) - 1
    return np.concatenate([np.moveaxis(np.asarray(frame, dtype=np.float64), -1, 0),
                           xs[None], ys[None]])


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    c, h, wd = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (C, H, W, 3, 3)
    cols = cols.transpose(0, 3, 4, 1, 2).reshape(c * 9, h * wd)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(w.shape[0], h, wd), cols


def _conv3x3_backward(grad: np.ndarray, cols: np.ndarray, w: np.ndarray, in_shape,
                      need_input: bool = True):
    c, h, wd = in_shape
    g = grad.reshape(grad.shape[0], -1)
    dw = (g @ cols.T).reshape(w.shape)
    db = g.sum(axis=1)
    if not need_input:
        return dw, db, None
    dcols = (w.reshape(w.shape[0], -1).T @ g).reshape(c, 3, 3, h, wd)
    dpad = np.zeros((c, h + 2, wd + 2))
    for ky in range(3):
        for kx in range(3):
            dpad[:, ky:ky + h, kx:kx + wd] += dcols[:, ky, kx]
    return dw, db, dpad[:, 1:-1, 1:-1]


def forward(model: ToyModel, frame: np.ndarray):
    """Run one frame. Returns ``(features, logits, cache)``."""
    x = encode_frame(frame)
    h1, cols1 = _conv3x3(x, model.w1, model.b1)
    a1 = np.maximum(h1, 0.0)
    feats, cols2 = _conv3x3(a1, model.w2, model.b2)
    d = feats.shape[0]
    logits = (model.w3 @ feats.reshape(d, -1) + model.b3[:, None]).reshape((-1,) + feats.shape[1:])
    return feats, logits, (x.shape, cols1, h1, a1.shape, cols2, feats)


def backward(model: ToyModel, cache, g_logits: np.ndarray, g_feats: np.ndarray) -> Dict[str, np.ndarray]:
    x_shape, cols1, h1, a1_shape, cols2, feats = cache
    d = feats.shape[0]
    gl = g_logits.reshape(g_logits.shape[0], -1)
    dw3 = gl @ feats.reshape(d, -1).T
    db3 = gl.sum(axis=1)
    gf = g_feats + (model.w3.T @ gl).reshape(feats.shape)
    dw2, db2, da1 = _conv3x3_backward(gf, cols2, model.w2, a1_shape)
    dh1 = da1 * (h1 > 0)
    dw1, db1, _ = _conv3x3_backward(dh1, cols1, model.w1, x_shape, need_input=False)
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}


def cross_entropy(logits: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Pixel-mean cross-entropy against a one-hot ``(N, H, W)`` target."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    logp = shifted - log_z
    npix = logits.shape[1] * logits.shape[2]
    value = -float((target * logp).sum()) / npix
    return value, (np.exp(logp) - target) / npix


# ---------------------------------------------------------------------------
# data


@dataclass
class PairData:
    """Everything one training step needs about a frame pair."""

    frame_t: np.ndarray
    frame_t2: np.ndarray
    pan_t: PanopticMap
    pan_t2: PanopticMap
    target_t: np.ndarray
    target_t2: np.ndarray
    flow: np.ndarray
    occ: np.ndarray
    tubes: List[Tuple[int, np.ndarray]]
    registry: SegmentRegistry


def make_pair(sample: VideoSample, t: int, t2: int, config: TrainConfig,
              rng: Optional[np.random.Generator] = None) -> PairData:
    flow = pair_flow(sample, t, t2)
    if config.flow_noise_std > 0:
        flow = perturb_flow(flow, config.flow_noise_std, rng or np.random.default_rng(0))
    occ = occlusion_map(sample.frames[t], sample.frames[t2], flow, config.alpha)
    f = config.downsample
    return PairData(
        frame_t=sample.frames[t], frame_t2=sample.frames[t2],
        pan_t=sample.panoptic[t], pan_t2=sample.panoptic[t2],
        target_t=onehot_channels(sample.panoptic[t], sample.registry),
        target_t2=onehot_channels(sample.panoptic[t2], sample.registry),
        flow=downsample_flow(flow, f), occ=downsample_map(occ, f),
        tubes=gt_tubes(sample.panoptic[t], sample.panoptic[t2], sample.registry),
        registry=sample.registry)


def feasible_offsets(t: int, num_frames: int, deltas: Sequence[int]) -> List[int]:
    return [d for d in deltas if 0 <= t + d < num_frames]


def sample_pair(num_frames: int, config: TrainConfig, rng: np.random.Generator) -> Tuple[int, int]:
    """Uniform target frame among those with a feasible offset, then a uniform offset."""
    starts = [t for t in range(num_frames) if feasible_offsets(t, num_frames, config.delta_range)]
    if not starts:
        raise ConfigError(
            f"no offset in {config.delta_range} fits a clip of {num_frames} frames")
    t = starts[int(rng.integers(len(starts)))]
    opts = feasible_offsets(t, num_frames, config.delta_range)
    return t, t + opts[int(rng.integers(len(opts)))]


# ---------------------------------------------------------------------------
# objective


def objective(model: ToyModel, pair: PairData, config: TrainConfig):
    """Loss components, weighted total and parameter gradients for one pair.

    Components that are disabled, or whose lambda is zero, are not evaluated
    and log as 0.0.
    """
    feats_t, logits_t, cache_t = forward(model, pair.frame_t)
    feats_t2, logits_t2, cache_t2 = forward(model, pair.frame_t2)

    ce_t, g_lt = cross_entropy(logits_t, pair.target_t)
    ce_t2, g_lt2 = cross_entropy(logits_t2, pair.target_t2)
    comps = {"task": 0.5 * (ce_t + ce_t2), "segment": 0.0, "warp": 0.0, "tube": 0.0}
    g_lt, g_lt2 = 0.5 * g_lt, 0.5 * g_lt2
    g_ft = np.zeros_like(feats_t)
    g_ft2 = np.zeros_like(feats_t2)

    enabled = config.enabled_losses
    views = [v for v in (GraphView.SEMANTIC, GraphView.INSTANCE) if v.value in enabled]
    if views and config.lambda_segment > 0:
        try:
            values, a, b = segment_loss_from_features(
                pair.pan_t, pair.pan_t2, feats_t, feats_t2, pair.registry, views,
                config.tau, config.contrast_mode)
            comps["segment"] = math.fsum(values[k] for k in sorted(values))
            g_ft += config.lambda_segment * a
            g_ft2 += config.lambda_segment * b
        except InsufficientBatchError:
            logger.info("pair has no traceable contrastive view; segment loss skipped")
    if config.lambda_pixel > 0:
        if "warp" in enabled:
            res = warp_loss(logits_t, logits_t2, pair.flow, pair.occ, config.warp_reduction)
            comps["warp"] = res.value
            g_lt = g_lt + config.lambda_pixel * res.gradients["logits_t"]
            g_lt2 = g_lt2 + config.lambda_pixel * res.gradients["logits_t2"]
        if "tube" in enabled and pair.tubes:
            res = tube_loss(logits_t, logits_t2, pair.tubes, pair.registry)
            comps["tube"] = res.value
            g_lt = g_lt + config.lambda_pixel * res.gradients["logits_t"]
            g_lt2 = g_lt2 + config.lambda_pixel * res.gradients["logits_t2"]

    for name, v in comps.items():
        if not math.isfinite(v):
            raise DivergenceError(name, v)
    comps["total"] = total_loss(comps, config)
    grads_a = backward(model, cache_t, g_lt, g_ft)
    grads_b = backward(model, cache_t2, g_lt2, g_ft2)
    grads = {k: grads_a[k] + grads_b[k] for k in PARAM_NAMES}
    return comps, grads


def total_loss(comps: Dict[str, float], config: TrainConfig) -> float:
    return (comps["task"] + config.lambda_segment * comps["segment"]
            + config.lambda_pixel * (comps["warp"] + comps["tube"]))


def train_step(model: ToyModel, pair: PairData, config: TrainConfig, step: int = 0):
    """One gradient-descent update. Returns ``(new_model, record)``."""
    comps, grads = objective(model, pair, config)
    lr = config.learning_rate
    new = model.with_params({k: p - lr * grads[k] for k, p in model.params().items()})
    record = {"step": step, **comps}
    return new, record


# ---------------------------------------------------------------------------
# logs and experiments


LOG_FIELDS = ("step", "task", "segment", "warp", "tube", "total")


@dataclass
class TrainLog:
    config: TrainConfig
    records: List[dict] = field(default_factory=list)
    report: Optional[VpqReport] = None
    heldout_reports: List[VpqReport] = field(default_factory=list)
    tc: Optional[float] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# lambda_segment={self.config.lambda_segment!r} "
                  f"lambda_pixel={self.config.lambda_pixel!r} "
                  f"enabled={','.join(sorted(self.config.enabled_losses)) or 'none'} "
                  f"task={TASK_LOSS_LABEL}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for r in self.records:
            writer.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])
        return buf.getvalue()

    def summary(self) -> dict:
        last = self.records[-1] if self.records else {}
        return {
            "config": self.config.to_json(),
            "task_loss": TASK_LOSS_LABEL,
            "steps": len(self.records),
            "final": {k: float(last[k]) for k in LOG_FIELDS[1:]} if last else {},
            "report": self.report.to_json() if self.report else None,
            "heldout_reports": [r.to_json() for r in self.heldout_reports],
            "tc": self.tc,
        }


def _check_layouts(samples: Sequence[VideoSample]) -> SegmentRegistry:
    reg = samples[0].registry
    for s in samples[1:]:
        if s.registry != reg:
            raise ConfigError("all scenes must share one registry layout (same counts)")
    return reg


def schedule(samples: Sequence[VideoSample], config: TrainConfig) -> List[Tuple[int, int, int]]:
    """Deterministic ``(scene, t, t2)`` order, independent of the enabled losses."""
    rng = np.random.default_rng([config.seed, 1])
    out = []
    for step in range(config.steps):
        s = step % len(samples)
        t, t2 = sample_pair(len(samples[s]), config, rng)
        out.append((s, t, t2))
    return out


def init_model(registry: SegmentRegistry, config: TrainConfig) -> ToyModel:
    return ToyModel.init(registry, config.feature_dim, np.random.default_rng([config.seed, 0]))


def train(samples: Sequence[VideoSample], config: TrainConfig,
          model: Optional[ToyModel] = None) -> Tuple[ToyModel, TrainLog]:
    registry = _check_layouts(samples)
    if model is None:
        model = init_model(registry, config)
    log = TrainLog(config)
    noise_rng = np.random.default_rng([config.seed, 2])
    cache: Dict[Tuple[int, int, int], PairData] = {}
    for step, key in enumerate(schedule(samples, config)):
        if key not in cache or config.flow_noise_std > 0:
            s, t, t2 = key
            cache[key] = make_pair(samples[s], t, t2, config, noise_rng)
        model, rec = train_step(model, cache[key], config, step)
        log.records.append(rec)
    return model, log


def predict_frame(model: ToyModel, frame: np.ndarray):
    """Per-frame inference: channel labels and unit pixel embeddings."""
    feats, logits, _ = forward(model, frame)
    return np.argmax(logits, axis=0), normalize_pixels(feats)


def predict_sequence(model: ToyModel, frames: Sequence[np.ndarray],
                     link_threshold: float = 0.5) -> PredictionSequence:
    """Segment each frame independently, then link thing segments into tracks.

    Stuff segments keep their class id as track id. Thing segments are linked
    to earlier tracks of the same class by cosine similarity of their pooled
    embeddings, greedily and one-to-one, when the similarity exceeds
    ``link_threshold``; unmatched segments open new tracks.
    """
    reg = model.registry
    tracks: Dict[int, Tuple[int, np.ndarray]] = {}
    next_id = THING_TRACK_BASE
    maps = []
    for frame in frames:
        labels, unit = predict_frame(model, frame)
        sem = np.zeros(labels.shape, dtype=np.int32)
        ins = np.zeros(labels.shape, dtype=np.int32)
        segs = []
        for ch, entry in enumerate(reg.entries):
            m = labels == ch
            if not m.any():
                continue
            sem[m] = entry.class_id
            if not entry.is_thing:
                ins[m] = entry.class_id
                continue
            pooled = mask_pool(unit, m)
            emb = l2_normalize(pooled) if np.any(pooled) else pooled
            segs.append((ch, entry.class_id, m, emb))
        cands = []
        for si, (_, cls, _, emb) in enumerate(segs):
            for tid in sorted(tracks):
                tcls, temb = tracks[tid]
                if tcls == cls:
                    sim = float(np.dot(emb, temb))
                    if sim > link_threshold:
                        cands.append((-sim, si, tid))
        cands.sort()
        assigned: Dict[int, int] = {}
        used = set()
        for _, si, tid in cands:
            if si not in assigned and tid not in used:
                assigned[si] = tid
                used.add(tid)
        for si, (_, cls, m, emb) in enumerate(segs):
            tid = assigned.get(si)
            if tid is None:
                tid = next_id
                next_id += 1
            tracks[tid] = (cls, emb)
            ins[m] = tid
        maps.append(PanopticMap(sem, ins))
    entries = [RegistryEntry(c, c, False) for c in reg.stuff_classes]
    entries += [RegistryEntry(tid, tracks[tid][0], True) for tid in sorted(tracks)]
    return PredictionSequence(maps, SegmentRegistry(tuple(entries)))


def evaluate(model: ToyModel, samples: Sequence[VideoSample], config: TrainConfig):
    """Held-out evaluation.

    Returns the mean VPQ report, the per-sample reports and the mean TC
    (implemented variant) of the predictions.
    """
    reports, tcs = [], []
    for s in samples:
        pred = predict_sequence(model, s.frames, config.link_threshold)
        reports.append(vpq_report(pred, s, config.windows))
        tcs.append(tc_metric(pred, s.flows))
    return mean_reports(reports), reports, math.fsum(tcs) / len(tcs)


@dataclass
class ExperimentResult:
    log: TrainLog
    baseline_log: TrainLog
    model: ToyModel
    baseline_model: ToyModel

    @property
    def report(self) -> VpqReport:
        return self.log.report

    @property
    def baseline_report(self) -> VpqReport:
        return self.baseline_log.report


_SAMPLE_CACHE: Dict[SceneConfig, VideoSample] = {}


def load_scenes(configs: Sequence[SceneConfig]) -> List[VideoSample]:
    out = []
    for c in configs:
        if c not in _SAMPLE_CACHE:
            _SAMPLE_CACHE[c] = generate_scene(c)
        out.append(_SAMPLE_CACHE[c])
    return out


def train_and_evaluate(config: TrainConfig, train_samples: Sequence[VideoSample],
                       heldout_samples: Sequence[VideoSample]) -> Tuple[ToyModel, TrainLog]:
    model, log = train(train_samples, config)
    log.report, log.heldout_reports, log.tc = evaluate(model, heldout_samples, config)
    return model, log


# Training is deterministic, so identical runs inside one process are shared
# between experiments (the baseline row appears in every grid).
_RUN_CACHE: Dict[tuple, Tuple[ToyModel, TrainLog]] = {}


def _cached_run(config: TrainConfig, train_scenes: Sequence[SceneConfig],
                heldout_scenes: Sequence[SceneConfig]) -> Tuple[ToyModel, TrainLog]:
    key = (config, tuple(train_scenes), tuple(heldout_scenes))
    if key not in _RUN_CACHE:
        _RUN_CACHE[key] = train_and_evaluate(config, load_scenes(train_scenes),
                                             load_scenes(heldout_scenes))
    return _RUN_CACHE[key]


def clear_caches() -> None:
    _RUN_CACHE.clear()
    _SAMPLE_CACHE.clear()


def run_experiment(config: TrainConfig, train_scenes: Sequence[SceneConfig],
                   heldout_scenes: Sequence[SceneConfig]) -> ExperimentResult:
    """Train the configured model and its task-only baseline from the same
    initialization and data order, and evaluate both on the held-out scenes."""
    if not train_scenes or not heldout_scenes:
        raise ConfigError("need at least one training and one held-out scene")
    model, log = _cached_run(config, train_scenes, heldout_scenes)
    base_model, base_log = _cached_run(config.baseline(), train_scenes, heldout_scenes)
    return ExperimentResult(log, base_log, model, base_model)


SEGMENT_GRID = (frozenset(), frozenset({"inst"}), frozenset({"sem"}), frozenset({"sem", "inst"}))
PIXEL_GRID = (frozenset(), frozenset({"warp"}), frozenset({"tube"}), frozenset({"warp", "tube"}))


def ablation_grid(config: TrainConfig, train_scenes: Sequence[SceneConfig],
                  heldout_scenes: Sequence[SceneConfig], seeds: Sequence[int],
                  rows: Sequence[FrozenSet[str]]) -> Dict[FrozenSet[str], List[TrainLog]]:
    """Held-out evaluation logs per enabled-loss subset and seed."""
    if not train_scenes or not heldout_scenes:
        raise ConfigError("need at least one training and one held-out scene")
    out: Dict[FrozenSet[str], List[TrainLog]] = {}
    for row in rows:
        out[frozenset(row)] = [
            _cached_run(replace(config, enabled_losses=frozenset(row), seed=seed),
                        train_scenes, heldout_scenes)[1]
            for seed in seeds]
    return out


def grid_means(grid: Dict[FrozenSet[str], List[TrainLog]]) -> Dict[FrozenSet[str], Tuple[VpqReport, float]]:
    """Seed-averaged report and TC per grid row."""
    return {row: (mean_reports([lg.report for lg in logs]),
                  math.fsum(lg.tc for lg in logs) / len(logs))
            for row, logs in grid.items()}


def full_row_dominates(grid: Dict[FrozenSet[str], List[TrainLog]]) -> bool:
    """True when the row with every loss scores >= each single-loss row (mean VPQ)."""
    means = grid_means(grid)
    full = max(means, key=len)
    singles = [r for r in means if len(r) == 1]
    return all(means[full][0].average[0] >= means[r][0].average[0] for r in singles)


def format_ablation(grid: Dict[FrozenSet[str], List[TrainLog]], columns: Sequence[str],
                    title: str, with_tc: bool = False) -> str:
    """Ablation table: one check-mark column per loss, then VPQ / Th / St (x100).

    The row with every loss enabled is labeled ``title``.
    """
    means = grid_means(grid)
    heads = ["Loss"] + list(columns) + ["VPQ", "VPQ^Th", "VPQ^St"] + (["TC*"] if with_tc else [])
    rows = []
    for row, (rep, tc) in means.items():
        cells = [title if len(row) == len(columns) else ""]
        cells += ["x" if c in row else "" for c in columns]
        cells += [f"{100 * v:.1f}" for v in rep.average]
        if with_tc:
            cells.append(f"{100 * tc:.1f}")
        rows.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(heads)]
    fmt = lambda cells: " | ".join(c.center(w) for c, w in zip(cells, widths))  # noqa: E731
    lines = [fmt(heads), "-" * len(fmt(heads))] + [fmt(r) for r in rows]
    n = len(next(iter(grid.values()))) if grid else 0
    lines.append(f"mean over {n} seed(s), held-out scenes")
    if with_tc:
        lines.append("TC*: temporal consistency, implemented variant (flow-warped dice)")
    return "\n".join(lines)
