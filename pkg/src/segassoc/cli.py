"""Command-line entry point.

Verbs: ``gen``, ``loss``, ``gradcheck``, ``train``, ``eval``, ``report`` and
``replay``. Every verb writes its artifacts plus a ``manifest.json`` into its
output directory; ``replay`` re-executes a manifest and compares checksums.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import tempfile
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .contrast import GraphView, segment_loss_from_features
from .core import onehot_channels
from .errors import ConsistencyError, SegassocError
from .io import (
    atomic_write,
    checksums,
    dumps,
    load_model,
    read_bundle,
    read_json,
    save_model,
    write_bundle,
    write_json,
)
from .pixel import tube_loss, warp_loss
from .synth import SceneConfig, generate_scene, standard_suite
from .trainer import (
    PIXEL_GRID,
    SEGMENT_GRID,
    TrainConfig,
    ablation_grid,
    evaluate,
    forward,
    format_ablation,
    full_row_dominates,
    grid_means,
    load_scenes,
    make_pair,
    parse_losses,
    total_loss,
    train,
)
from .vpq import PredictionSequence, VpqReport, format_table, mean_reports, tc_metric, vpq_report

OUT_ENV = "SEGASSOC_OUT"
EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"
GT_LOGIT_SCALE = 100.0

logger = logging.getLogger("segassoc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _out_dir(args, verb: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "segassoc_runs")) / verb


# ---------------------------------------------------------------------------
# flag groups


def _add_scene_flags(p):
    d = SceneConfig()
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--height", type=int, default=d.height)
    p.add_argument("--num-frames", "--frames", dest="num_frames", type=int, default=d.num_frames)
    p.add_argument("--num-things", type=int, default=d.num_things)
    p.add_argument("--num-stuff-classes", type=int, default=d.num_stuff_classes)
    p.add_argument("--num-thing-classes", type=int, default=d.num_thing_classes)
    p.add_argument("--max-speed", type=float, default=d.max_speed)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--noise-std", type=float, default=d.noise_std)


def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--lambda-segment", type=float, default=d.lambda_segment)
    p.add_argument("--lambda-pixel", type=float, default=d.lambda_pixel)
    p.add_argument("--tau", type=float, default=d.tau)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--delta-range", type=_ints, default=list(d.delta_range))
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--contrast-mode", choices=("simclr", "strict_eq2"), default=d.contrast_mode)
    p.add_argument("--losses", default="segment,pixel",
                   help="comma list of sem, inst, warp, tube, segment, pixel; 'none' for the baseline")
    p.add_argument("--feature-dim", type=int, default=d.feature_dim)
    p.add_argument("--warp-reduction", choices=("mean", "sum"), default=d.warp_reduction)
    p.add_argument("--downsample", type=int, default=d.downsample)
    p.add_argument("--link-threshold", type=float, default=d.link_threshold)
    p.add_argument("--flow-noise-std", type=float, default=d.flow_noise_std)
    p.add_argument("--windows", type=_ints, default=list(d.windows))


def _add_data_flags(p, split: str):
    p.add_argument("--bundles", nargs="+", default=None,
                   help=f"scene bundle directories (default: the standard {split} suite)")
    p.add_argument("--suite-seed", type=int, default=0)


def _scene_config(args) -> SceneConfig:
    return SceneConfig(**{f.name: getattr(args, f.name) for f in fields(SceneConfig)})


def _train_config(args) -> TrainConfig:
    losses = [] if args.losses.strip() in ("none", "") else args.losses.split(",")
    return TrainConfig(
        lambda_segment=args.lambda_segment, lambda_pixel=args.lambda_pixel, tau=args.tau,
        alpha=args.alpha, delta_range=tuple(args.delta_range), steps=args.steps,
        learning_rate=args.learning_rate, seed=args.seed, contrast_mode=args.contrast_mode,
        enabled_losses=parse_losses(losses), feature_dim=args.feature_dim,
        warp_reduction=args.warp_reduction, downsample=args.downsample,
        link_threshold=args.link_threshold, flow_noise_std=args.flow_noise_std,
        windows=tuple(args.windows))


def _samples(args, split: str):
    if args.bundles:
        return [read_bundle(b) for b in args.bundles]
    tr, ho = standard_suite(args.suite_seed)
    return load_scenes(tr if split == "train" else ho)


# ---------------------------------------------------------------------------
# commands; each returns (artifact paths, manifest extras)


def cmd_gen(args, out: Path):
    cfg = _scene_config(args)
    sample = generate_scene(cfg)
    write_bundle(sample, out)
    paths = sorted(p for p in out.iterdir() if p.name != MANIFEST and not p.name.startswith("."))
    print(f"wrote {len(sample)} frames to {out}")
    return paths, {"config": cfg.to_json(), "seeds": [cfg.seed]}


def _gt_inputs(sample, t: int):
    onehot = onehot_channels(sample.panoptic[t], sample.registry)
    return onehot, GT_LOGIT_SCALE * onehot


def cmd_loss(args, out: Path):
    config = _train_config(args)
    sample = read_bundle(args.bundle)
    n = len(sample)
    if not (0 <= args.t < n and 0 <= args.t2 < n) or args.t == args.t2:
        raise ConsistencyError(f"frame pair ({args.t}, {args.t2}) invalid for {n} frames")
    pair = make_pair(sample, args.t, args.t2, config)
    if args.predictions == "gt":
        feats_t, logits_t = _gt_inputs(sample, args.t)
        feats_t2, logits_t2 = _gt_inputs(sample, args.t2)
    else:
        model = load_model(args.model)
        feats_t, logits_t, _ = forward(model, pair.frame_t)
        feats_t2, logits_t2, _ = forward(model, pair.frame_t2)
    comps = {"segment": 0.0, "warp": 0.0, "tube": 0.0}
    detail: Dict[str, object] = {}
    enabled = config.enabled_losses
    views = [v for v in (GraphView.SEMANTIC, GraphView.INSTANCE) if v.value in enabled]
    if views:
        values, _, _ = segment_loss_from_features(pair.pan_t, pair.pan_t2, feats_t, feats_t2,
                                                  pair.registry, views, config.tau,
                                                  config.contrast_mode)
        detail["segment_views"] = {k: values[k] for k in sorted(values)}
        comps["segment"] = sum(values[k] for k in sorted(values))
    if "warp" in enabled:
        comps["warp"] = warp_loss(logits_t, logits_t2, pair.flow, pair.occ, config.warp_reduction).value
    if "tube" in enabled:
        comps["tube"] = tube_loss(logits_t, logits_t2, pair.tubes, pair.registry).value
    comps["task"] = 0.0
    total = total_loss(comps, config)
    del comps["task"]
    result = {
        "pair": [args.t, args.t2],
        "predictions": args.predictions,
        "lambda_segment": config.lambda_segment,
        "lambda_pixel": config.lambda_pixel,
        "components": comps,
        "total": total,
        "occlusion_mean": float(pair.occ.mean()),
        "traceable_segments": [tid for tid, _ in pair.tubes],
        **detail,
    }
    path = out / "loss.json"
    write_json(path, result)
    print(dumps(result), end="")
    return [path], {"config": config.to_json(), "seeds": [config.seed]}


def cmd_gradcheck(args, out: Path):
    from .gradcheck import format_results, run_all

    results = run_all(args.seed, flip=args.flip_sign)
    path = out / "gradcheck.json"
    write_json(path, {"seed": args.seed, "flip_sign": args.flip_sign,
                      "suites": [r.to_json() for r in results]})
    print(format_results(results))
    extra = {"seeds": [args.seed], "passed": all(r.passed for r in results)}
    return [path], extra


def cmd_train(args, out: Path):
    config = _train_config(args)
    samples = _samples(args, "train")
    model, log = train(samples, config)
    csv_path, summary_path = out / "train_log.csv", out / "summary.json"
    atomic_write(csv_path, log.to_csv().encode("utf-8"))
    write_json(summary_path, log.summary())
    save_model(model, out / "model", config)
    paths = [csv_path, summary_path] + sorted((out / "model").iterdir())
    final = log.records[-1] if log.records else {}
    print(f"trained {config.steps} steps; final " +
          " ".join(f"{k}={final[k]:.4f}" for k in ("task", "segment", "warp", "tube", "total")
                   if k in final))
    return paths, {"config": config.to_json(), "seeds": [config.seed]}


def cmd_eval(args, out: Path):
    samples = _samples(args, "heldout")
    windows = tuple(args.windows)
    if args.model:
        model = load_model(args.model)
        config = replace(TrainConfig(), windows=windows, link_threshold=args.link_threshold)
        report, per_sample, tc = evaluate(model, samples, config)
        source = str(Path(args.model).resolve())
    else:
        per_sample = []
        tcs = []
        for s in samples:
            pred = PredictionSequence(list(s.panoptic), s.registry)
            per_sample.append(vpq_report(pred, s, windows))
            tcs.append(tc_metric(pred, s.flows))
        report, tc = mean_reports(per_sample), float(np.mean(tcs))
        source = "ground truth"
    doc = {"predictions": source, "report": report.to_json(),
           "per_scene": [r.to_json() for r in per_sample], "tc_implemented_variant": tc}
    path = out / "report.json"
    write_json(path, doc)
    print(format_table({args.label: report}, "windows"))
    print(f"TC (implemented variant): {100 * tc:.1f}")
    return [path], {"windows": list(windows)}


def cmd_report(args, out: Path):
    paths = []
    extra: Dict[str, object] = {}
    if args.reports:
        rows = {}
        for i, rp in enumerate(args.reports):
            label = args.labels[i] if args.labels and i < len(args.labels) else Path(rp).parent.name
            rows[label] = VpqReport.from_json(read_json(rp)["report"])
        text = format_table(rows, "method")
        print(text)
        path = out / "table.txt"
        atomic_write(path, (text + "\n").encode("utf-8"))
        paths.append(path)
    if args.grid:
        config = _train_config(args)
        tr, ho = standard_suite(args.suite_seed)
        grids = {"segment": (SEGMENT_GRID, ("inst", "sem"), False),
                 "pixel": (PIXEL_GRID, ("warp", "tube"), True)}
        names = ["segment", "pixel"] if args.grid == "both" else [args.grid]
        doc = {"seeds": args.seeds, "config": config.to_json(), "grids": {}}
        texts = []
        for name in names:
            rows, columns, with_tc = grids[name]
            grid = ablation_grid(config, tr, ho, args.seeds, rows)
            ok = full_row_dominates(grid)
            means = grid_means(grid)
            doc["grids"][name] = {
                "rows": [{"losses": sorted(r), "report": rep.to_json(), "tc": tc,
                          "per_seed_vpq": [lg.report.average[0] for lg in grid[r]]}
                         for r, (rep, tc) in means.items()],
                "full_row_dominates": ok,
            }
            title = "L_segment" if name == "segment" else "L_pixel"
            texts.append(format_ablation(grid, columns, title, with_tc))
            texts.append(f"full row >= single-loss rows: {'PASS' if ok else 'WARN'}")
        text = "\n\n".join(texts)
        print(text)
        path = out / "ablation.json"
        write_json(path, doc)
        tpath = out / "ablation.txt"
        atomic_write(tpath, (text + "\n").encode("utf-8"))
        paths += [path, tpath]
        extra = {"config": config.to_json(), "seeds": args.seeds}
    if not paths:
        raise UsageError("report needs --reports and/or --grid")
    return paths, extra


COMMANDS = {"gen": cmd_gen, "loss": cmd_loss, "gradcheck": cmd_gradcheck, "train": cmd_train,
            "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segassoc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"segassoc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV}/{name})")
        return p

    _add_scene_flags(add("gen", "generate a synthetic scene bundle"))

    p = add("loss", "evaluate the temporal losses on one frame pair")
    p.add_argument("--bundle", required=True)
    p.add_argument("--t", type=int, default=0)
    p.add_argument("--t2", type=int, default=10)
    p.add_argument("--predictions", choices=("gt", "model"), default="gt")
    p.add_argument("--model", default=None)
    _add_train_flags(p)

    p = add("gradcheck", "finite-difference check of every analytic gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flip-sign", action="store_true", help="negative control: negate gradients")

    p = add("train", "train the toy model")
    _add_train_flags(p)
    _add_data_flags(p, "train")

    p = add("eval", "VPQ report of a model, or of ground truth against itself")
    p.add_argument("--model", default=None, help="model directory (default: ground truth)")
    p.add_argument("--windows", type=_ints, default=list(TrainConfig().windows))
    p.add_argument("--link-threshold", type=float, default=TrainConfig().link_threshold)
    p.add_argument("--label", default="prediction")
    _add_data_flags(p, "heldout")

    p = add("report", "render VPQ tables and ablation grids")
    p.add_argument("--reports", nargs="+", default=None, help="report.json files from eval")
    p.add_argument("--labels", nargs="+", default=None)
    p.add_argument("--grid", choices=("segment", "pixel", "both"), default=None)
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--suite-seed", type=int, default=0)
    _add_train_flags(p)

    p = sub.add_parser("replay", help="re-run a manifest and compare artifact checksums")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="where to re-run (default: a temp directory)")
    return parser


def _strip_out(argv: Sequence[str]) -> List[str]:
    res, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        res.append(a)
    return res


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.command == "replay":
        return replay(args.manifest, args.out)
    if args.command == "loss" and args.predictions == "model" and not args.model:
        raise UsageError("--predictions model needs --model")
    out = _out_dir(args, args.command)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    paths, extra = COMMANDS[args.command](args, out)
    manifest = {
        "tool": "segassoc",
        "version": __version__,
        "command": args.command,
        "argv": _strip_out(argv),
        "cwd": os.getcwd(),
        "artifacts": checksums(paths, out),
        **extra,
    }
    write_json(out / MANIFEST, manifest)
    print(f"[{args.command}] {len(paths)} artifact(s) in {out} "
          f"({time.perf_counter() - start:.2f}s)", file=sys.stderr)
    if args.command == "gradcheck" and not extra["passed"]:
        return EXIT_NUMERIC
    return EXIT_OK


def replay(manifest_path: str, out: Optional[str] = None) -> int:
    """Re-execute a manifest and compare artifact checksums byte for byte."""
    manifest = read_json(manifest_path)
    with contextlib.ExitStack() as stack:
        if out is None:
            out = stack.enter_context(tempfile.TemporaryDirectory(prefix="segassoc-replay-"))
        prev = os.getcwd()
        os.chdir(manifest["cwd"])
        try:
            code = run(list(manifest["argv"]) + ["--out", str(Path(out).resolve())])
        finally:
            os.chdir(prev)
        again = read_json(Path(out) / MANIFEST)["artifacts"]
    same = again == manifest["artifacts"]
    for name in sorted(set(again) | set(manifest["artifacts"])):
        ok = again.get(name) == manifest["artifacts"].get(name)
        if not ok:
            print(f"differs: {name}")
    print(f"replay {'identical' if same else 'DIFFERENT'}: {len(again)} artifact(s)")
    if code != EXIT_OK:
        return code
    return EXIT_OK if same else EXIT_VALIDATION


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return run(argv)
    except UsageError as e:
        print(f"segassoc: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as e:
        print(f"segassoc: numeric error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SegassocError, ValueError, OSError, KeyError) as e:
        print(f"segassoc: validation error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
