"""Synthetic panoptic video: moving colored shapes over textured stuff bands.

Thing ``k`` of a scene always wears palette color ``k`` and belongs to thing
class ``num_stuff_classes + k % num_thing_classes``, so scenes generated with
the same counts share one registry layout and a per-pixel model can bind its
logit channels to segments across scenes.

Velocities are integer pixel offsets per frame, which keeps masks exact
translations of each other and ground-truth flow exact at every visible pixel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import PanopticMap, RegistryEntry, SegmentRegistry
from .errors import ConfigError

THING_TRACK_BASE = 1000

THING_PALETTE = np.array([
    [0.90, 0.10, 0.10],
    [0.10, 0.35, 0.95],
    [0.95, 0.85, 0.05],
    [0.05, 0.80, 0.30],
    [0.85, 0.20, 0.85],
    [0.05, 0.85, 0.90],
    [0.98, 0.55, 0.05],
    [0.55, 0.30, 0.10],
])

STUFF_PALETTE = np.array([
    [0.55, 0.70, 0.85],
    [0.40, 0.40, 0.40],
    [0.35, 0.55, 0.25],
    [0.70, 0.62, 0.50],
    [0.25, 0.25, 0.45],
])


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 64
    num_frames: int = 20
    num_things: int = 4
    num_stuff_classes: int = 2
    num_thing_classes: int = 2
    max_speed: float = 2.0
    seed: int = 0
    noise_std: float = 0.01

    def validate(self) -> None:
        if self.width < 16:
            raise ConfigError(f"width must be >= 16, got {self.width}")
        if self.height < 16:
            raise ConfigError(f"height must be >= 16, got {self.height}")
        if self.num_frames < 2:
            raise ConfigError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.num_things < 0:
            raise ConfigError(f"num_things must be >= 0, got {self.num_things}")
        if self.num_thing_classes < 1:
            raise ConfigError(f"num_thing_classes must be >= 1, got {self.num_thing_classes}")
        if self.num_stuff_classes < 1:
            raise ConfigError(f"num_stuff_classes must be >= 1, got {self.num_stuff_classes}")
        if self.max_speed < 0:
            raise ConfigError(f"max_speed must be >= 0, got {self.max_speed}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class VideoSample:
    """Frames, panoptic labels, forward flows and the segment registry.

    ``flows[t]`` maps frame ``t`` to ``t + 1``. ``occluded[t]`` marks the
    pixels of frame ``t`` whose content is hidden or out of frame at ``t + 1``.
    """

    config: SceneConfig
    frames: List[np.ndarray]
    panoptic: List[PanopticMap]
    flows: List[np.ndarray]
    registry: SegmentRegistry
    velocities: Dict[int, Tuple[int, int]]
    visible: List[List[int]] = field(default_factory=list)
    occluded: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.visible:
            self.visible = [p.track_ids() for p in self.panoptic]
        if not self.occluded:
            self.occluded = [occlusion_truth(self.panoptic[t], self.panoptic[t + 1], self.flows[t])
                             for t in range(len(self.flows))]

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, VideoSample):
            return NotImplemented
        return (self.config == other.config
                and self.registry == other.registry
                and self.velocities == other.velocities
                and self.visible == other.visible
                and len(self.frames) == len(other.frames)
                and all(np.array_equal(a, b) for a, b in zip(self.frames, other.frames))
                and all(a == b for a, b in zip(self.panoptic, other.panoptic))
                and all(np.array_equal(a, b) for a, b in zip(self.flows, other.flows)))


def occlusion_truth(pan_t: PanopticMap, pan_t1: PanopticMap, flow: np.ndarray) -> np.ndarray:
    """Pixels of frame t with no same-track correspondence in frame t+1."""
    h, w = pan_t.shape
    ys, xs = np.mgrid[0:h, 0:w]
    tx = np.rint(xs + flow[..., 0]).astype(int)
    ty = np.rint(ys + flow[..., 1]).astype(int)
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    same = np.zeros((h, w), dtype=bool)
    same[inside] = pan_t1.instance[ty[inside], tx[inside]] == pan_t.instance[inside]
    return ~same


def _stuff_layout(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.height, cfg.width
    s = cfg.num_stuff_classes
    xs = np.arange(w)
    ys = np.arange(h)[:, None]
    label = np.zeros((h, w), dtype=np.int32)
    for j in range(1, s):
        base = h * j / s + rng.uniform(-0.05, 0.05) * h
        amp = rng.uniform(1.0, max(1.5, 0.06 * h))
        freq = rng.uniform(0.5, 2.0) * 2 * math.pi / w
        phase = rng.uniform(0, 2 * math.pi)
        boundary = base + amp * np.sin(freq * xs + phase)
        label += (ys >= boundary[None, :]).astype(np.int32)
    return label


def _stuff_image(cfg: SceneConfig, label: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = label.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(cfg.num_stuff_classes):
        fx, fy = rng.uniform(0.05, 0.2, size=2)
        phi = rng.uniform(0, 2 * math.pi)
        base = STUFF_PALETTE[c % len(STUFF_PALETTE)]
        texture = 0.06 * np.sin(2 * math.pi * (fx * xs + fy * ys) + phi)
        region = label == c
        img[region] = base[None, :] + texture[region][:, None]
    return img


def _sample_velocity(max_speed: float, rng: np.random.Generator) -> Tuple[int, int]:
    m = int(math.floor(max_speed))
    if m == 0:
        return 0, 0
    while True:
        vx, vy = (int(v) for v in rng.integers(-m, m + 1, size=2))
        if vx * vx + vy * vy <= max_speed * max_speed:
            return vx, vy


def _sample_start(extent: int, radius: float, v: int, span: int, rng: np.random.Generator) -> float:
    lo, hi = radius, extent - 1 - radius
    # prefer starts that keep the shape inside for the whole clip
    lo2, hi2 = max(lo, lo - v * span), min(hi, hi - v * span)
    if lo2 <= hi2:
        lo, hi = lo2, hi2
    return float(rng.uniform(lo, hi))


def _shape_mask(kind: str, cx: float, cy: float, r: float, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    if kind == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    half = 0.85 * r
    return (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)


def generate_scene(config: SceneConfig) -> VideoSample:
    """Render a deterministic synthetic panoptic video for ``config``."""
    config.validate()
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    h, w, n_t = cfg.height, cfg.width, cfg.num_frames
    s = cfg.num_stuff_classes

    stuff_label = _stuff_layout(cfg, rng)
    background = _stuff_image(cfg, stuff_label, rng)

    entries = [RegistryEntry(c, c, False) for c in range(s)]
    things = []
    for k in range(cfg.num_things):
        track = THING_TRACK_BASE + k
        cls = s + k % cfg.num_thing_classes
        entries.append(RegistryEntry(track, cls, True))
        radius = rng.uniform(0.08, 0.13) * min(h, w)
        kind = "circle" if rng.uniform() < 0.5 else "square"
        vx, vy = _sample_velocity(cfg.max_speed, rng)
        cx = _sample_start(w, radius, vx, n_t - 1, rng)
        cy = _sample_start(h, radius, vy, n_t - 1, rng)
        color = np.clip(THING_PALETTE[k % len(THING_PALETTE)] + rng.uniform(-0.04, 0.04, 3), 0, 1)
        things.append(dict(track=track, cls=cls, radius=radius, kind=kind,
                           v=(vx, vy), c0=(cx, cy), color=color))
    registry = SegmentRegistry(tuple(entries))
    velocities = {c: (0, 0) for c in range(s)}
    velocities.update({t["track"]: t["v"] for t in things})

    frames, panoptic, flows = [], [], []
    for t in range(n_t):
        img = background.copy()
        sem = stuff_label.copy()
        ins = stuff_label.copy()
        fx = np.zeros((h, w))
        fy = np.zeros((h, w))
        for th in things:  # later things are drawn on top
            vx, vy = th["v"]
            m = _shape_mask(th["kind"], th["c0"][0] + vx * t, th["c0"][1] + vy * t,
                            th["radius"], h, w)
            img[m] = th["color"]
            sem[m] = th["cls"]
            ins[m] = th["track"]
            fx[m] = vx
            fy[m] = vy
        if cfg.noise_std > 0:
            img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
        frames.append(np.clip(img, 0.0, 1.0).astype(np.float32))
        panoptic.append(PanopticMap(sem, ins))
        if t < n_t - 1:
            flows.append(np.stack([fx, fy], axis=-1).astype(np.float32))

    return VideoSample(cfg, frames, panoptic, flows, registry, velocities)


def pair_flow(sample: VideoSample, t: int, t2: int) -> np.ndarray:
    """Exact displacement field from frame ``t`` to frame ``t2`` (either order).

    Every visible pixel moves with its track's constant velocity.
    """
    pan = sample.panoptic[t]
    out = np.zeros(pan.shape + (2,))
    for tid in pan.track_ids():
        vx, vy = sample.velocities[tid]
        m = pan.instance == tid
        out[m, 0] = vx * (t2 - t)
        out[m, 1] = vy * (t2 - t)
    return out


def compose_flow(flows: List[np.ndarray], start: int, end: int) -> Tuple[np.ndarray, np.ndarray]:
    """Chain consecutive forward flows from frame ``start`` to frame ``end``.

    Each step bilinearly samples the next flow at the current displaced
    position. Returns the composed ``(H, W, 2)`` flow and a boolean validity
    grid that is False wherever an intermediate position left the frame.
    """
    from .pixel import bilinear_warp

    if start >= end:
        raise ValueError(f"compose_flow needs start < end, got {start} >= {end}")
    if start < 0 or end > len(flows):
        raise ValueError(f"frames {start}..{end} out of range for {len(flows)} flows")
    total = np.asarray(flows[start], dtype=np.float64).copy()
    valid = np.ones(total.shape[:2], dtype=bool)
    for j in range(start + 1, end):
        nxt = np.moveaxis(np.asarray(flows[j], dtype=np.float64), -1, 0)
        step, ok = bilinear_warp(nxt, total)
        total = total + np.moveaxis(step, 0, -1)
        valid &= ok
    h, w = valid.shape
    ys, xs = np.mgrid[0:h, 0:w]
    tx, ty = xs + total[..., 0], ys + total[..., 1]
    valid &= (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    total[~valid] = 0.0
    return total, valid


def standard_suite(base_seed: int = 0, num_train: int = 10, num_heldout: int = 5,
                   size: int = 64, num_frames: int = 20) -> Tuple[List[SceneConfig], List[SceneConfig]]:
    """The fixed train / held-out scene split used by the training experiments."""
    def make(i):
        return SceneConfig(width=size, height=size, num_frames=num_frames, num_things=4,
                           num_stuff_classes=2, num_thing_classes=2, max_speed=2.0,
                           seed=base_seed * 1000 + i, noise_std=0.01)
    train = [make(i) for i in range(num_train)]
    heldout = [make(100 + i) for i in range(num_heldout)]
    return train, heldout
