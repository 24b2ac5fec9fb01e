"""Train the toy siamese model with and without the temporal losses.

This is a shortened run on two small clips; the full comparison (ten
training clips, five held-out, five seeds) is what ``segassoc report --grid``
runs.
"""

from dataclasses import replace

from segassoc.synth import SceneConfig, generate_scene
from segassoc.trainer import TrainConfig, evaluate, train

clip = SceneConfig(width=32, height=32, num_frames=12, num_things=3)
train_clips = [generate_scene(replace(clip, seed=s)) for s in (0, 1)]
heldout = [generate_scene(replace(clip, seed=50))]

config = TrainConfig(steps=80, delta_range=(-4, 4), windows=(0, 2, 4))
for label, cfg in (("task only", config.baseline()), ("with temporal losses", config)):
    model, log = train(train_clips, cfg)
    report, _, tc = evaluate(model, heldout, cfg)
    last = log.records[-1]
    print(f"{label}: final task {last['task']:.3f}, segment {last['segment']:.3f}, "
          f"warp {last['warp']:.3f}, tube {last['tube']:.3f}")
    vpq, th, st = report.average
    print(f"  held-out VPQ {100 * vpq:.1f} (things {100 * th:.1f}, stuff {100 * st:.1f}), "
          f"TC {100 * tc:.1f}")
