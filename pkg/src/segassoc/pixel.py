"""Pixel-level correspondence: bilinear warping, occlusion weights, the
logit warping loss and the dice tube-matching loss.

All gradients are closed form. Flow fields are ``(H, W, 2)`` arrays holding
``(dx, dy)`` displacements; warping samples the source at ``p + flow(p)``.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    LossResult,
    PanopticMap,
    SegmentRegistry,
    extract_masks,
    softmax_backward,
    softmax_channels,
)
from .errors import ConsistencyError

REDUCTIONS = ("mean", "sum")


def _sample_coords(flow: np.ndarray):
    h, w = flow.shape[:2]
    if h < 2 or w < 2:
        raise ValueError("warping needs at least a 2x2 grid")
    ys, xs = np.mgrid[0:h, 0:w]
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = np.clip(np.floor(sx), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(sy), 0, h - 2).astype(np.intp)
    fx = np.where(valid, sx - x0, 0.0)
    fy = np.where(valid, sy - y0, 0.0)
    return x0, y0, fx, fy, valid


def bilinear_warp(source: np.ndarray, flow: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Backward-warp ``source`` by sampling it at ``p + flow(p)``.

    Args:
      source: ``(H, W)`` or ``(C, H, W)`` array.
      flow: ``(H, W, 2)`` displacement field.

    Returns:
      The warped array (zero where invalid) and a boolean validity grid that is
      False where the sample position falls outside the frame.
    """
    source = np.asarray(source, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    if source.shape[-2:] != flow.shape[:2] or flow.shape[-1:] != (2,):
        raise ValueError(f"source {source.shape} and flow {flow.shape} disagree")
    x0, y0, fx, fy, valid = _sample_coords(flow)
    s = source[..., y0, x0] * ((1 - fx) * (1 - fy)) \
        + source[..., y0, x0 + 1] * (fx * (1 - fy)) \
        + source[..., y0 + 1, x0] * ((1 - fx) * fy) \
        + source[..., y0 + 1, x0 + 1] * (fx * fy)
    return s * valid, valid


def bilinear_warp_adjoint(grad_out: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Transpose of :func:`bilinear_warp` w.r.t. its source."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    x0, y0, fx, fy, valid = _sample_coords(np.asarray(flow, dtype=np.float64))
    lead = grad_out.shape[:-2]
    h, w = grad_out.shape[-2:]
    g = (grad_out * valid).reshape(-1, h * w)
    out = np.zeros_like(g)
    for dy, dx, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        idx = ((y0 + dy) * w + (x0 + dx)).ravel()
        wgt = wgt.ravel()
        for c in range(g.shape[0]):
            out[c] += np.bincount(idx, weights=g[c] * wgt, minlength=h * w)
    return out.reshape(lead + grad_out.shape[-2:])


def occlusion_map(frame_t: np.ndarray, frame_t2: np.ndarray, flow: np.ndarray,
                  alpha: float = 50.0) -> np.ndarray:
    """Per-pixel confidence ``exp(-alpha * |I_t - warp(I_t2)|)``.

    Frames are ``(H, W, 3)``; the norm is taken over RGB. Pixels whose warp
    leaves the frame get weight 0.
    """
    frame_t = np.asarray(frame_t, dtype=np.float64)
    frame_t2 = np.asarray(frame_t2, dtype=np.float64)
    if frame_t.shape != frame_t2.shape:
        raise ValueError(f"frame shapes disagree: {frame_t.shape} vs {frame_t2.shape}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    warped, valid = bilinear_warp(np.moveaxis(frame_t2, -1, 0), flow)
    diff = np.sqrt(((np.moveaxis(frame_t, -1, 0) - warped) ** 2).sum(axis=0))
    return np.exp(-alpha * diff) * valid


def downsample_map(grid: np.ndarray, factor: int) -> np.ndarray:
    """Area-average a ``(H, W)`` grid by an integer factor."""
    if factor == 1:
        return np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    if h % factor or w % factor:
        raise ValueError(f"grid {grid.shape} not divisible by {factor}")
    return grid.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def downsample_flow(flow: np.ndarray, factor: int) -> np.ndarray:
    """Average a flow field over ``factor`` blocks and rescale its displacements."""
    if factor == 1:
        return np.asarray(flow, dtype=np.float64)
    h, w, _ = flow.shape
    if h % factor or w % factor:
        raise ValueError(f"flow {flow.shape} not divisible by {factor}")
    pooled = flow.reshape(h // factor, factor, w // factor, factor, 2).mean(axis=(1, 3))
    return pooled / factor


def perturb_flow(flow: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian flow noise, for robustness studies."""
    return flow + rng.normal(0.0, std, size=flow.shape)


def warp_loss(logits_t: np.ndarray, logits_t2: np.ndarray, flow: np.ndarray,
              occ: np.ndarray, reduction: str = "mean") -> LossResult:
    """Occlusion-weighted L2 distance between logits and warped partner logits.

    ``logits_t2`` is warped into frame ``t`` with ``flow`` (frame t -> t2
    displacements, at logit resolution). ``mean`` divides the pixel sum by
    ``H * W``; ``sum`` leaves it unnormalized.
    """
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    logits_t = np.asarray(logits_t, dtype=np.float64)
    logits_t2 = np.asarray(logits_t2, dtype=np.float64)
    if logits_t.shape != logits_t2.shape:
        raise ValueError(f"logit shapes disagree: {logits_t.shape} vs {logits_t2.shape}")
    if occ.shape != logits_t.shape[1:] or flow.shape[:2] != logits_t.shape[1:]:
        raise ValueError(
            f"flow {flow.shape} / occlusion {occ.shape} not at logit resolution {logits_t.shape[1:]}")
    warped, valid = bilinear_warp(logits_t2, flow)
    weight = occ * valid
    resid = logits_t - warped
    norm = np.sqrt((resid * resid).sum(axis=0))
    scale = 1.0 / norm.size if reduction == "mean" else 1.0
    value = float((weight * norm).sum()) * scale
    # subgradient 0 where the residual vanishes
    coef = np.divide(weight * scale, norm, out=np.zeros_like(norm), where=norm > 0)
    g_t = resid * coef
    g_t2 = bilinear_warp_adjoint(-g_t, flow)
    return LossResult(value, {"logits_t": g_t, "logits_t2": g_t2})


def build_tube(soft_t: np.ndarray, soft_t2: np.ndarray, channel: int) -> np.ndarray:
    """Stack channel ``channel`` of two soft-mask volumes into a ``(2, H, W)`` tube."""
    if soft_t.shape != soft_t2.shape:
        raise ValueError(f"volume shapes disagree: {soft_t.shape} vs {soft_t2.shape}")
    if not 0 <= channel < soft_t.shape[0]:
        raise ValueError(f"channel {channel} out of range for {soft_t.shape[0]} channels")
    return np.stack([soft_t[channel], soft_t2[channel]])


def gt_tubes(pan_t: PanopticMap, pan_t2: PanopticMap,
             registry: SegmentRegistry) -> List[Tuple[int, np.ndarray]]:
    """Binary ground-truth tubes of the segments present in both frames.

    Returned in ascending track-id order.
    """
    a = dict(extract_masks(pan_t, registry))
    b = dict(extract_masks(pan_t2, registry))
    return [(tid, np.stack([a[tid], b[tid]]).astype(np.float64))
            for tid in sorted(set(a) & set(b))]


def tube_loss(logits_t: np.ndarray, logits_t2: np.ndarray,
              tubes: Sequence[Tuple[int, np.ndarray]],
              registry: Optional[SegmentRegistry] = None) -> LossResult:
    """Mean of ``1 - dice`` between predicted soft tubes and binary gt tubes.

    Args:
      logits_t, logits_t2: ``(N, H, W)`` logit volumes.
      tubes: ``(track_id, tube)`` pairs with ``(2, H, W)`` binary tubes. With a
        registry the track id is mapped to its channel; without one the id
        is the channel index.
      registry: channel order of the logits.
    """
    if len(tubes) == 0:
        raise ValueError("tube_loss needs at least one ground-truth tube")
    soft_t = softmax_channels(logits_t)
    soft_t2 = softmax_channels(logits_t2)
    grad_t = np.zeros_like(soft_t)
    grad_t2 = np.zeros_like(soft_t2)
    n = len(tubes)
    total = 0.0
    for tid, gt in sorted(tubes, key=lambda x: x[0]):
        gt = np.asarray(gt, dtype=np.float64)
        if not gt.any():
            raise ConsistencyError(f"ground-truth tube for {tid} is empty")
        ch = registry.index_of(tid) if registry is not None else int(tid)
        pred = build_tube(soft_t, soft_t2, ch)
        num = 2.0 * float((pred * gt).sum())
        den = float((pred * pred).sum() + (gt * gt).sum())
        d = num / den
        total += 1.0 - d
        # d(1 - D)/dp = -(2 gt - 2 D p) / den
        g = -(2.0 * gt - 2.0 * d * pred) / (den * n)
        grad_t[ch] += g[0]
        grad_t2[ch] += g[1]
    return LossResult(total / n, {
        "logits_t": softmax_backward(soft_t, grad_t),
        "logits_t2": softmax_backward(soft_t2, grad_t2),
    })


def pixel_level_loss(logits_t: np.ndarray, logits_t2: np.ndarray, flow: np.ndarray,
                     occ: np.ndarray, tubes: Sequence[Tuple[int, np.ndarray]],
                     registry: Optional[SegmentRegistry] = None,
                     use_warp: bool = True, use_tube: bool = True,
                     reduction: str = "mean") -> LossResult:
    """Warping loss plus tube-matching loss; either term can be switched off."""
    out = LossResult(0.0, {"logits_t": np.zeros(np.shape(logits_t)),
                           "logits_t2": np.zeros(np.shape(logits_t2))})
    if use_warp:
        out = out + warp_loss(logits_t, logits_t2, flow, occ, reduction)
    if use_tube:
        out = out + tube_loss(logits_t, logits_t2, tubes, registry)
    return out
