"""Acceptance criteria, one test each, printing a PASS/FAIL line per criterion.

Criteria 6 and 7 train on the standard synthetic suite and dominate the
runtime of the whole test run (several minutes on one core).
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from cases import random_instance
from segassoc.cli import main
from segassoc.contrast import ContrastBatch, contrastive_loss
from segassoc.core import PanopticMap, SegmentRegistry, dice
from segassoc.gradcheck import MODEL_TOLERANCE, LOSS_TOLERANCE, run_all
from segassoc.pixel import occlusion_map, tube_loss, warp_loss
from segassoc.synth import SceneConfig, generate_scene, standard_suite
from segassoc.trainer import (
    PIXEL_GRID,
    SEGMENT_GRID,
    TrainConfig,
    ablation_grid,
    format_ablation,
    full_row_dominates,
    grid_means,
    run_experiment,
)
from segassoc.vpq import PredictionSequence, vpq_oracle, vpq_window

SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail, soft=False):
        word = "PASS" if ok else ("WARN" if soft else "FAIL")
        with capsys.disabled():
            print(f"\n[criterion {n}] {word}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def suite():
    return standard_suite()


def test_1_gradient_correctness(verdict):
    start = time.perf_counter()
    results = run_all(seed=0)
    elapsed = time.perf_counter() - start
    ok = all(r.passed and (r.name.startswith("model") or r.instances >= 20) for r in results)
    ok = ok and elapsed < 60
    detail = ", ".join(f"{r.name} {r.max_error:.1e}/{r.tolerance:.0e} (n={r.instances})"
                       for r in results)
    assert verdict(1, ok, f"{detail}; {elapsed:.1f}s")
    assert LOSS_TOLERANCE == 1e-4 and MODEL_TOLERANCE == 1e-3


def test_2_closed_form_values(verdict):
    e = np.eye(2)
    contra = contrastive_loss(ContrastBatch(e, e, [(0, 0), (1, 1)], 0.5)).value
    expected = -math.log(math.e ** 2 / (math.e ** 2 + 2))
    d = dice(np.array([1.0, 1, 0, 0]), np.array([0.0, 1, 1, 0]))
    a = np.zeros((4, 4, 3))
    b = a.copy()
    b[..., 0], b[..., 1] = 0.06, 0.08  # difference norm 0.1
    occ = occlusion_map(a, b, np.zeros((4, 4, 2)), alpha=50.0)[0, 0]
    ok = (abs(contra - expected) < 1e-6 and abs(expected - 0.23954) < 1e-5 and d == 0.5
          and abs(occ - math.exp(-5)) < 1e-9)
    assert verdict(2, ok, f"contrastive {contra:.6f}, dice {d}, occlusion {occ:.9f}")


def test_3_oracle_equivalence(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(100):
        pred, gt = random_instance(rng)
        for k in (0, 1, 2):
            g, o = vpq_window(pred, gt, k), vpq_oracle(pred, gt, k)
            if not all((math.isnan(x) and math.isnan(y)) or x == y for x, y in zip(g, o)):
                mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    assert verdict(3, ok, f"{mismatches} mismatches over 100 instances x 3 windows; {elapsed:.1f}s")


def test_4_vpq_behaviour(verdict):
    scene = generate_scene(SceneConfig(width=32, height=32, num_frames=8, num_things=3, seed=2))
    perfect = PredictionSequence(list(scene.panoptic), scene.registry)
    perfect_ok = all(vpq_window(perfect, scene, k) == (1.0, 1.0, 1.0) for k in range(8))

    # id swap of two same-class things inside a two-frame window
    reg = SegmentRegistry(((0, 0, False), (1000, 2, True), (1001, 2, True)))
    f0 = np.array([[1000, 1000, 1001, 1001], [0, 0, 0, 0]])
    f1 = np.array([[1001, 1001, 1000, 1000], [0, 0, 0, 0]])
    sem = np.where(f0 >= 1000, 2, 0)
    gt = PredictionSequence([PanopticMap(sem, f0), PanopticMap(sem, f0)], reg)
    swapped = PredictionSequence([PanopticMap(sem, f0), PanopticMap(sem, f1)], reg)
    _, th, st = vpq_window(swapped, gt, 1)
    swap_ok = th == 0.0 and st == 1.0

    # perfect masks with corrupted tracks: random switches, reported k-columns
    rng = np.random.default_rng(4)
    mono_ok, per_k = True, []
    for seed in range(8):
        clip = generate_scene(SceneConfig(seed=200 + seed))
        things = [e.track_id for e in clip.registry if e.is_thing]
        maps = [p.instance.copy() for p in clip.panoptic]
        entries = list(clip.registry.entries)
        for j in range(int(rng.integers(1, 4))):
            tid, at, new_id = int(rng.choice(things)), int(rng.integers(1, len(clip))), 1900 + j
            for ins in maps[at:]:
                ins[ins == tid] = new_id
            entries.append((new_id, clip.registry.class_of(tid), True))
        pred = PredictionSequence([PanopticMap(p.semantic, m) for p, m in zip(clip.panoptic, maps)],
                                  SegmentRegistry(tuple(entries)))
        scores = [vpq_window(pred, clip, k)[0] for k in (0, 5, 10, 15)]
        mono_ok &= all(a >= b for a, b in zip(scores, scores[1:]))
        per_k.append(scores)
    per_k = np.mean(per_k, axis=0)

    ok = perfect_ok and swap_ok and mono_ok
    ks = " ".join(f"{100 * v:.1f}" for v in per_k)
    assert verdict(4, ok, f"perfect={perfect_ok}, swap thing VPQ {th}, mean k=0/5/10/15 [{ks}]")


def _descend(loss_fn, params, lr, steps=500, target=None):
    first = loss_fn(params).value
    value = first
    for _ in range(steps):
        res = loss_fn(params)
        value = res.value
        if target is not None and value < target:
            break
        params = {k: v - lr * res.gradients[k] for k, v in params.items()}
    return first, loss_fn(params).value


def test_5_direct_optimization(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(5)

    def rows(x):
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def contra(p):
        batch = ContrastBatch(rows(p["raw_t"]), rows(p["raw_t2"]),
                              [(0, 0), (1, 1)], 0.5, raw_t=p["raw_t"], raw_t2=p["raw_t2"])
        return contrastive_loss(batch, wrt_raw=True)

    c0, c1 = _descend(contra, {"raw_t": rng.normal(size=(2, 16)),
                               "raw_t2": rng.normal(size=(2, 16))}, lr=1.0)

    flow = rng.uniform(-1.5, 1.5, size=(8, 8, 2))
    occ = np.ones((8, 8))

    def warp(p):
        return warp_loss(p["logits_t"], p["logits_t2"], flow, occ)

    w0, w1 = _descend(warp, {"logits_t": rng.normal(size=(3, 8, 8)),
                             "logits_t2": rng.normal(size=(3, 8, 8))}, lr=2.0)

    lab = rng.integers(0, 3, size=(2, 8, 8))
    tubes = [(c, (lab == c).astype(float)) for c in range(3)]

    def tube(p):
        return tube_loss(p["logits_t"], p["logits_t2"], tubes)

    t0, t1 = _descend(tube, {"logits_t": rng.normal(size=(3, 8, 8)),
                             "logits_t2": rng.normal(size=(3, 8, 8))}, lr=30.0, target=0.01)
    elapsed = time.perf_counter() - start
    drops = {"contrastive": 1 - c1 / c0, "warp": 1 - w1 / w0, "tube": 1 - t1 / t0}
    ok = all(d >= 0.9 for d in drops.values()) and t1 < 0.01 and elapsed < 60
    detail = ", ".join(f"{k} -{100 * d:.1f}%" for k, d in drops.items())
    assert verdict(5, ok, f"{detail}; tube final {t1:.4f}; {elapsed:.1f}s")


def test_6_training_effect(verdict, suite):
    start = time.perf_counter()
    tr, ho = suite
    full, base = [], []
    for seed in SEEDS:
        res = run_experiment(TrainConfig(seed=seed), tr, ho)
        full.append(res.report.average[0])
        base.append(res.baseline_report.average[0])
    elapsed = time.perf_counter() - start
    wins = sum(f > b for f, b in zip(full, base))
    mean_f, mean_b = float(np.mean(full)), float(np.mean(base))
    ok = mean_f > mean_b and wins >= 4 and elapsed < 15 * 60
    assert verdict(6, ok, f"mean VPQ {100 * mean_f:.1f} vs baseline {100 * mean_b:.1f}, "
                          f"{wins}/5 seeds improve; {elapsed:.0f}s")


def test_7_ablation_grids(verdict, suite):
    tr, ho = suite
    lines = []
    layout_ok, dominance = True, []
    for rows, columns, title, with_tc in ((SEGMENT_GRID, ("inst", "sem"), "L_segment", False),
                                          (PIXEL_GRID, ("warp", "tube"), "L_pixel", True)):
        grid = ablation_grid(TrainConfig(), tr, ho, SEEDS, rows)
        text = format_ablation(grid, columns, title, with_tc)
        head = [h.strip() for h in text.splitlines()[0].split("|")]
        layout_ok &= head[:3] == ["Loss", *columns] and head[3:6] == ["VPQ", "VPQ^Th", "VPQ^St"]
        layout_ok &= len(grid) == 4 and all(len(v) == len(SEEDS) for v in grid.values())
        dominance.append(full_row_dominates(grid))
        means = grid_means(grid)
        lines.append(title + " " + " ".join(
            f"{'+'.join(sorted(r)) or 'none'}={100 * means[r][0].average[0]:.1f}" for r in rows))
    assert layout_ok
    verdict(7, all(dominance), "; ".join(lines), soft=True)


def test_8_determinism(verdict, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    small = ["--width", "16", "--height", "16", "--frames", "6", "--num-things", "2"]
    fast = ["--steps", "3", "--feature-dim", "4", "--delta-range=-2,2", "--windows", "0,1"]
    runs = [
        ["gen", *small, "--out", "gen"],
        ["loss", "--bundle", "gen", "--t", "0", "--t2", "2", "--out", "loss"],
        ["gradcheck", "--out", "gradcheck"],
        ["train", *fast, "--bundles", "gen", "--out", "train"],
        ["eval", "--model", "train/model", "--bundles", "gen", "--windows", "0,1", "--out", "eval"],
        ["report", "--reports", "eval/report.json", "--out", "report"],
    ]
    codes = {}
    for argv in runs:
        assert main(argv) == 0
        codes[argv[0]] = main(["replay", f"{argv[-1]}/manifest.json"])
    capsys.readouterr()
    artifacts = sum(len(json.loads((tmp_path / a[-1] / "manifest.json").read_text())["artifacts"])
                    for a in runs)
    ok = all(c == 0 for c in codes.values())
    assert verdict(8, ok, f"{len(runs)} manifests replayed, {artifacts} artifacts byte-identical"
                          if ok else f"replay exit codes {codes}")
