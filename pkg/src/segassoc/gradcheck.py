"""Finite-difference verification of every analytic gradient in the package.

Each suite draws randomized instances from a seeded generator, evaluates the
analytic gradient and compares it with central differences. The reported
error of an instance is the norm-wise relative error
``|a - b| / max(|a|, |b|)`` taken over all of its gradient tensors.

``flip`` negates the analytic gradients before comparison. It exists as a
negative control: with it set, every suite must fail.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from .contrast import ContrastBatch, contrastive_loss
from .core import l2_normalize
from .pixel import tube_loss, warp_loss
from .synth import SceneConfig, generate_scene
from .trainer import TrainConfig, init_model, make_pair, objective

FD_STEP = 1e-5
LOSS_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
MIN_INSTANCES = 20


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                       eps: float = FD_STEP) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    a = np.concatenate([np.ravel(x) for x in analytic])
    b = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.max_error <= self.tolerance

    def to_json(self) -> dict:
        return {"suite": self.name, "instances": self.instances, "max_rel_error": self.max_error,
                "tolerance": self.tolerance, "passed": self.passed}


def _check(params: Dict[str, np.ndarray], value: Callable[[Dict[str, np.ndarray]], float],
           analytic: Dict[str, np.ndarray], flip: bool) -> float:
    numeric = []
    for name in sorted(params):
        def f(x, name=name):
            return value({**params, name: x})
        numeric.append(central_difference(f, params[name]))
    sign = -1.0 if flip else 1.0
    return relative_error([sign * analytic[k] for k in sorted(params)], numeric)


def contrastive_suite(seed: int = 0, instances: int = MIN_INSTANCES, flip: bool = False,
                      mode: str = "simclr") -> SuiteResult:
    """Gradients w.r.t. the pre-normalization pooled vectors (N in 2..6, D in {4, 16})."""
    rng = np.random.default_rng([seed, 10])
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 7))
        d = int(rng.choice([4, 16]))
        extra_t, extra_t2 = int(rng.integers(0, 2)), int(rng.integers(0, 2))
        raw = {"raw_t": rng.normal(size=(n + extra_t, d)),
               "raw_t2": rng.normal(size=(n + extra_t2, d))}
        perm = rng.permutation(n)
        pairing = [(i, int(perm[i])) for i in range(n)]

        def batch(p):
            return ContrastBatch(np.array([l2_normalize(v) for v in p["raw_t"]]),
                                 np.array([l2_normalize(v) for v in p["raw_t2"]]),
                                 pairing, raw_t=p["raw_t"], raw_t2=p["raw_t2"])

        res = contrastive_loss(batch(raw), mode, wrt_raw=True)
        err = _check(raw, lambda p: contrastive_loss(batch(p), mode).value, res.gradients, flip)
        worst = max(worst, err)
    return SuiteResult(f"contrastive[{mode}]", instances, worst, LOSS_TOLERANCE)


def warp_suite(seed: int = 0, instances: int = MIN_INSTANCES, flip: bool = False,
               size: int = 8, channels: int = 3) -> SuiteResult:
    """Random logits, fractional flows and occlusion weights on an 8x8, N=3 grid."""
    rng = np.random.default_rng([seed, 11])
    worst = 0.0
    for _ in range(instances):
        flow = rng.uniform(-2.5, 2.5, size=(size, size, 2))
        occ = rng.uniform(0.0, 1.0, size=(size, size))
        reduction = "mean" if rng.random() < 0.5 else "sum"
        params = {"logits_t": rng.normal(size=(channels, size, size)),
                  "logits_t2": rng.normal(size=(channels, size, size))}
        res = warp_loss(params["logits_t"], params["logits_t2"], flow, occ, reduction)
        err = _check(params, lambda p: warp_loss(p["logits_t"], p["logits_t2"], flow, occ,
                                                 reduction).value, res.gradients, flip)
        worst = max(worst, err)
    return SuiteResult("warp", instances, worst, LOSS_TOLERANCE)


def tube_suite(seed: int = 0, instances: int = MIN_INSTANCES, flip: bool = False,
               size: int = 8, channels: int = 3) -> SuiteResult:
    rng = np.random.default_rng([seed, 12])
    worst = 0.0
    for _ in range(instances):
        labels = rng.integers(0, channels, size=(2, size, size))
        tubes = [(c, (labels == c).astype(np.float64)) for c in range(channels)
                 if (labels == c).any()]
        params = {"logits_t": 2 * rng.normal(size=(channels, size, size)),
                  "logits_t2": 2 * rng.normal(size=(channels, size, size))}
        res = tube_loss(params["logits_t"], params["logits_t2"], tubes)
        err = _check(params, lambda p: tube_loss(p["logits_t"], p["logits_t2"], tubes).value,
                     res.gradients, flip)
        worst = max(worst, err)
    return SuiteResult("tube", instances, worst, LOSS_TOLERANCE)


def model_suite(seed: int = 0, instances: int = 1, flip: bool = False,
                size: int = 16, feature_dim: int = 4) -> SuiteResult:
    """Full objective (task + every temporal loss) w.r.t. all model parameters."""
    worst = 0.0
    for k in range(instances):
        scene = generate_scene(SceneConfig(width=size, height=size, num_frames=4, num_things=2,
                                           max_speed=1.0, seed=seed * 100 + k))
        config = TrainConfig(feature_dim=feature_dim, delta_range=(-2, 2), seed=seed + k,
                             alpha=5.0)
        model = init_model(scene.registry, config)
        # larger weights keep the ReLU pre-activations away from their kink
        model = model.with_params({n: 5 * p for n, p in model.params().items()})
        pair = make_pair(scene, 0, 2, config)
        _, grads = objective(model, pair, config)
        params = model.params()
        err = _check(params, lambda p: objective(model.with_params(p), pair, config)[0]["total"],
                     grads, flip)
        worst = max(worst, err)
    return SuiteResult("model", instances, worst, MODEL_TOLERANCE)


def run_all(seed: int = 0, flip: bool = False) -> List[SuiteResult]:
    return [contrastive_suite(seed, flip=flip),
            contrastive_suite(seed, flip=flip, mode="strict_eq2"),
            warp_suite(seed, flip=flip),
            tube_suite(seed, flip=flip),
            model_suite(seed, flip=flip)]


def format_results(results: Sequence[SuiteResult]) -> str:
    lines = [f"{'suite':<24} {'n':>3} {'max rel err':>12} {'tol':>8}  result"]
    for r in results:
        lines.append(f"{r.name:<24} {r.instances:>3} {r.max_error:>12.3e} {r.tolerance:>8.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
