"""Command-line entry points.

Every command resolves its configuration (flags over config file over
defaults), creates run-<timestamp>-<confighash>/ under --out with the full
config echoed into it, and writes its JSON/CSV/PNG artifacts there. The
dataset root falls back to $GRASP_DATA_ROOT.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, plots
from .codec import decode, encode_pyramid, save_maps
from .config import RunConfig, load_run_config, make_run_dir
from .dataset import (
    GraspSample,
    SplitSpec,
    make_split,
    parse_cornell,
    parse_jacquard,
    project_rects,
    save_manifest,
)
from .geometry import MetricConfig
from .network import load_checkpoint
from .training import train

DEFAULT_JACCARD_SWEEP = [0.25, 0.30, 0.35, 0.40, 0.45]
DEFAULT_ANGLE_SWEEP_DEG = [30.0, 25.0, 20.0, 15.0, 10.0]


def _with_dataset_defaults(cfg: RunConfig) -> RunConfig:
    """Jacquard runs default to no augmentation and a 5:1 split; only values
    the user left at the global defaults are touched."""
    import dataclasses

    from .training import TrainConfig

    if cfg.dataset != "jacquard":
        return cfg
    if cfg.train_fraction == RunConfig().train_fraction:
        cfg = dataclasses.replace(cfg, train_fraction=5.0 / 6.0)
    if cfg.train.augment_count == TrainConfig().augment_count:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, augment_count=0)
        )
    return cfg


def _load_samples(cfg: RunConfig) -> list[GraspSample]:
    root = cfg.root or os.environ.get("GRASP_DATA_ROOT", "")
    if not root:
        raise SystemExit("no dataset root: pass --root or set GRASP_DATA_ROOT")
    if cfg.dataset == "cornell":
        return parse_cornell(root)
    if cfg.dataset == "jacquard":
        return parse_jacquard(root)
    raise SystemExit(f"unknown dataset {cfg.dataset!r}")


def _split(samples, cfg: RunConfig):
    spec = SplitSpec(mode=cfg.split_mode, train_fraction=cfg.train_fraction, seed=cfg.seed)
    return make_split(samples, spec)


def _collect_overrides(args) -> dict[str, str]:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.dataset:
        overrides["dataset"] = args.dataset
    if args.root:
        overrides["root"] = args.root
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return overrides


def cmd_encode(args, cfg: RunConfig, run_dir: Path) -> int:
    samples = _load_samples(cfg)
    maps_dir = run_dir / "maps"
    maps_dir.mkdir()
    size = cfg.train.input_size
    for sample in samples:
        rects = project_rects(sample, size)
        pyramid = encode_pyramid(rects, size, size, cfg.encoder)
        save_maps(maps_dir / f"{sample.source_id}.gmaps", pyramid, cfg.encoder)
    save_manifest(run_dir / "manifest.tsv", samples)
    print(f"encoded {len(samples)} samples into {maps_dir}")
    return 0


def cmd_train(args, cfg: RunConfig, run_dir: Path) -> int:
    samples = _load_samples(cfg)
    split = _split(samples, cfg)
    with open(run_dir / "split_train.txt", "w") as f:
        f.write("\n".join(split[0]) + "\n")
    with open(run_dir / "split_test.txt", "w") as f:
        f.write("\n".join(split[1]) + "\n")
    result = train(samples, split, cfg.net, cfg.train, cfg.encoder, out_dir=run_dir,
                   metric_cfg=cfg.metric)
    print(f"best val accuracy {result.best_accuracy:.3f}; metrics in {result.metrics_path}")
    return 0


def cmd_evaluate(args, cfg: RunConfig, run_dir: Path) -> int:
    samples = _load_samples(cfg)
    if args.predictions:
        poses, _ = evaluation.load_predictions(args.predictions)
        known = {s.source_id for s in samples}
        ids = [i for i in sorted(poses) if i in known]
        if not ids:
            raise SystemExit("prediction cache shares no sample ids with the dataset")
        mean_ms = 0.0
    else:
        if not args.checkpoint:
            raise SystemExit("evaluate needs --checkpoint or --predictions")
        model, _ = load_checkpoint(args.checkpoint)
        _, test_ids = _split(samples, cfg)
        ids = test_ids or [s.source_id for s in samples]
        poses, mean_ms = evaluation.predict_poses(
            model, samples, ids, cfg.encoder, cfg.train.input_size
        )
        evaluation.save_predictions(
            run_dir / "predictions.json", poses, {"config_hash": cfg.hash()}
        )
    result = evaluation.evaluate_predictions(
        poses, samples, ids, cfg.metric, cfg.train.input_size, mean_ms
    )
    (run_dir / "result.json").write_text(evaluation.result_to_json(result))
    evaluation.write_result_csv(run_dir / "result.csv", result)
    print(f"accuracy {result.accuracy:.4f} over {len(ids)} samples -> {run_dir}")
    return 0


def cmd_sweep(args, cfg: RunConfig, run_dir: Path) -> int:
    if not args.predictions:
        raise SystemExit("sweep needs --predictions (run evaluate first)")
    samples = _load_samples(cfg)
    poses, _ = evaluation.load_predictions(args.predictions)
    known = {s.source_id for s in samples}
    ids = [i for i in sorted(poses) if i in known]
    if not ids:
        raise SystemExit("prediction cache shares no sample ids with the dataset")
    jaccards = [float(v) for v in args.jaccards.split(",")] if args.jaccards else DEFAULT_JACCARD_SWEEP
    angles_deg = [float(v) for v in args.angles.split(",")] if args.angles else DEFAULT_ANGLE_SWEEP_DEG
    result = evaluation.sweep(
        poses, samples, ids, jaccards, [math.radians(a) for a in angles_deg],
        cfg.train.input_size,
    )
    evaluation.write_sweep_csv(run_dir / "sweep.csv", result)
    (run_dir / "sweep.json").write_text(evaluation.sweep_to_json(result))
    plots.save_sweep_curves(result, run_dir / "sweep_jaccard.png", run_dir / "sweep_angle.png")
    print(f"sweep over {len(jaccards)}x{len(angles_deg)} configs -> {run_dir}")
    return 0


def cmd_ablate(args, cfg: RunConfig, run_dir: Path) -> int:
    samples = _load_samples(cfg)
    split = _split(samples, cfg)
    names = args.variants.split(",") if args.variants else list(evaluation.ABLATION_VARIANTS)
    variants = {}
    for name in names:
        if name not in evaluation.ABLATION_VARIANTS:
            raise SystemExit(f"unknown variant {name!r}; choose from "
                             f"{', '.join(evaluation.ABLATION_VARIANTS)}")
        variants[name] = evaluation.ABLATION_VARIANTS[name]
    jaccards = [float(v) for v in args.jaccards.split(",")] if args.jaccards else DEFAULT_JACCARD_SWEEP
    grid = [MetricConfig(j, cfg.metric.angle_threshold) for j in jaccards]
    results = evaluation.ablate(
        samples, split, variants, grid, cfg.net, cfg.train, cfg.encoder, run_dir
    )
    with open(run_dir / "ablation.csv", "w") as f:
        f.write("variant,jaccard,angle_deg,accuracy\n")
        for variant, cells in sorted(results.items()):
            for (j, a), acc in sorted(cells.items()):
                f.write(f"{variant},{j:g},{math.degrees(a):g},{acc:.10g}\n")
    plots.save_ablation_bars(results, run_dir / "ablation.png")
    print(f"ablation over {len(variants)} variants -> {run_dir}")
    return 0


def cmd_visualize(args, cfg: RunConfig, run_dir: Path) -> int:
    samples = _load_samples(cfg)
    by_id = {s.source_id: s for s in samples}
    sample_id = args.sample or sorted(by_id)[0]
    if sample_id not in by_id:
        raise SystemExit(f"unknown sample id {sample_id!r}")
    sample = by_id[sample_id]
    size = cfg.train.input_size
    truths = project_rects(sample, size)

    if args.checkpoint:
        import torch
        from .dataset import to_network_input
        from .network import output_to_maps

        model, _ = load_checkpoint(args.checkpoint)
        model.eval()
        with torch.no_grad():
            outputs = model(torch.from_numpy(to_network_input(sample, size)[None]))
        maps = output_to_maps(outputs[-1], scale=1.0)
    else:
        maps = encode_pyramid(truths, size, size, cfg.encoder)[-1]

    plots.save_map_heatmaps(maps, run_dir, prefix=sample_id)
    poses = decode(maps, n=cfg.top_n, cfg=cfg.encoder)

    from PIL import Image
    from .dataset import input_window

    x0, y0, _ = input_window(sample.rgb.shape[:2], size)
    side = min(sample.rgb.shape[:2])
    rgb = np.asarray(
        Image.fromarray(sample.rgb[y0 : y0 + side, x0 : x0 + side]).resize((size, size))
    )
    plots.save_overlay(rgb, poses, run_dir / f"{sample_id}_overlay.png", truths=truths)
    print(f"wrote heatmaps and overlay for {sample_id} -> {run_dir}")
    return 0


_COMMANDS = {
    "encode": cmd_encode,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "visualize": cmd_visualize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaussgrasp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--dataset", choices=["cornell", "jacquard"])
        p.add_argument("--root", help="dataset root (default: $GRASP_DATA_ROOT)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="runs", help="parent directory for run outputs")
        if name in ("evaluate", "sweep"):
            p.add_argument("--predictions", help="prediction cache JSON")
        if name in ("evaluate", "visualize"):
            p.add_argument("--checkpoint")
        if name in ("sweep", "ablate"):
            p.add_argument("--jaccards", help="comma list of Jaccard thresholds")
        if name == "sweep":
            p.add_argument("--angles", help="comma list of angle thresholds (deg)")
        if name == "ablate":
            p.add_argument("--variants", help="comma list from: "
                           + ",".join(evaluation.ABLATION_VARIANTS))
        if name == "visualize":
            p.add_argument("--sample", help="sample id (default: first)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _with_dataset_defaults(load_run_config(args.config, _collect_overrides(args)))
        run_dir = make_run_dir(args.out, cfg)
        np.random.seed(cfg.seed)
        return _COMMANDS[args.command](args, cfg, run_dir)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
