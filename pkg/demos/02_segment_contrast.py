"""Contrastive association of segments across two frames.

Each segment becomes one pooled, unit-length embedding per frame. The same
segment in the other frame is its positive; every other segment, in either
frame, is a negative.
"""

import math

import numpy as np

from segassoc.contrast import ContrastBatch, GraphView, build_contrast_batch, contrastive_loss
from segassoc.core import onehot_channels
from segassoc.synth import SceneConfig, generate_scene

# two orthogonal segments that did not move: the loss has a closed form
e = np.eye(2)
value = contrastive_loss(ContrastBatch(e, e, [(0, 0), (1, 1)], temperature=0.5)).value
print(f"orthogonal pair: {value:.5f} (closed form {-math.log(math.e**2 / (math.e**2 + 2)):.5f})")

# the same loss only counting cross-frame negatives
strict = contrastive_loss(ContrastBatch(e, e, [(0, 0), (1, 1)]), mode="strict_eq2").value
print(f"cross-frame negatives only: {strict:.5f}")

# graphs built from a real pair; features are one-hot channels plus noise
scene = generate_scene(SceneConfig(width=32, height=32, num_frames=6, num_things=3, seed=1))
rng = np.random.default_rng(0)
feats = [onehot_channels(scene.panoptic[t], scene.registry) + 0.3 * rng.normal(
    size=(len(scene.registry), 32, 32)) for t in (0, 4)]

for view in (GraphView.SEMANTIC, GraphView.INSTANCE):
    batch = build_contrast_batch(scene.panoptic[0], scene.panoptic[4], feats[0], feats[1],
                                 scene.registry, view)
    loss = contrastive_loss(batch).value
    print(f"{view.value:4s} view: nodes {batch.ids_t} -> {batch.ids_t2}, "
          f"{batch.num_pairs} positives, loss {loss:.4f}")

# gradient descent on the raw embeddings pulls positives together
raw_t, raw_t2 = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
unit = lambda x: x / np.linalg.norm(x, axis=1, keepdims=True)  # noqa: E731
for step in range(201):
    batch = ContrastBatch(unit(raw_t), unit(raw_t2), [(0, 0), (1, 1), (2, 2)],
                          raw_t=raw_t, raw_t2=raw_t2)
    res = contrastive_loss(batch, wrt_raw=True)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {res.value:.4f}")
    raw_t = raw_t - 1.0 * res.gradients["raw_t"]
    raw_t2 = raw_t2 - 1.0 * res.gradients["raw_t2"]
