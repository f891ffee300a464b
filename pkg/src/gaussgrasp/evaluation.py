"""Dataset-level accuracy under the rectangle metric, threshold sweeps, and
the encoding / fusion ablation harness.

Predictions are cached as JSON so sweeps re-score the same poses instead of
re-running inference; per-sample pair scores (Jaccard, angle difference
against every ground truth) make every threshold query an exact re-scoring.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np
import torch

from .codec import EncoderConfig, decode, pose_to_rectangle
from .dataset import GraspSample, project_rects, to_network_input
from .geometry import GraspPose, GraspRectangle, MetricConfig, angle_difference, jaccard
from .network import GraspNetwork, NetworkConfig, output_to_maps


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    pose: GraspPose | None
    matched: bool
    best_jaccard: float
    best_angle_diff: float


@dataclass
class EvalResult:
    accuracy: float
    per_sample: list[SampleScore]
    config: MetricConfig
    mean_inference_ms: float = 0.0


@dataclass
class SweepResult:
    grid: dict[tuple[float, float], float]
    jaccard_curve: list[tuple[float, float]]  # (threshold, accuracy) at 30 deg
    angle_curve: list[tuple[float, float]]  # (threshold_rad, accuracy) at 0.25


def pair_scores(pred: GraspRectangle, truths: list[GraspRectangle]) -> list[tuple[float, float]]:
    """(jaccard, angle difference) of the prediction against every truth."""
    return [(jaccard(pred, t), angle_difference(pred.angle, t.angle)) for t in truths]


def score_from_pairs(pairs: list[tuple[float, float]], cfg: MetricConfig) -> tuple[bool, float, float]:
    """Collapse pair scores to (matched, best_jaccard, best_angle_diff).

    Among truths passing both thresholds the highest-Jaccard one is reported,
    so a matched sample's numbers always satisfy the config; otherwise the
    overall best-Jaccard pair is reported for diagnostics.
    """
    if not pairs:
        return False, 0.0, math.pi / 2
    passing = [
        p for p in pairs if p[0] > cfg.jaccard_threshold and p[1] < cfg.angle_threshold
    ]
    pool = passing if passing else pairs
    best = max(pool, key=lambda p: p[0])
    return bool(passing), best[0], best[1]


def predict_poses(
    model: GraspNetwork,
    samples: list[GraspSample],
    ids: list[str],
    encoder_cfg: EncoderConfig = EncoderConfig(),
    input_size: int = 320,
    warmup: int = 10,
) -> tuple[dict[str, GraspPose | None], float]:
    """Top-1 decoded pose per sample id, plus mean forward+decode wall time
    in milliseconds over the samples after `warmup` of them."""
    by_id = {s.source_id: s for s in samples}
    poses: dict[str, GraspPose | None] = {}
    all_timings = []
    model.eval()
    for sample_id in ids:
        sample = by_id[sample_id]
        inputs = torch.from_numpy(to_network_input(sample, input_size)[None])
        t0 = time.perf_counter()
        with torch.no_grad():
            outputs = model(inputs)
        maps = output_to_maps(outputs[-1], scale=1.0)
        decoded = decode(maps, n=1, cfg=encoder_cfg)
        all_timings.append((time.perf_counter() - t0) * 1000.0)
        poses[sample_id] = decoded[0] if decoded else None
    # splits smaller than the warmup count still get a timing figure
    timings = all_timings[warmup:] if len(all_timings) > warmup else all_timings
    mean_ms = float(np.mean(timings)) if timings else 0.0
    return poses, mean_ms


def evaluate_predictions(
    poses: dict[str, GraspPose | None],
    samples: list[GraspSample],
    ids: list[str],
    cfg: MetricConfig = MetricConfig(),
    input_size: int = 320,
    mean_inference_ms: float = 0.0,
) -> EvalResult:
    """Score cached poses against ground truth in the network input frame."""
    if not ids:
        raise ValueError("empty test split")
    by_id = {s.source_id: s for s in samples}
    per_sample = []
    matched_count = 0
    for sample_id in ids:
        pose = poses.get(sample_id)
        truths = project_rects(by_id[sample_id], input_size)
        if pose is None or not truths:
            per_sample.append(SampleScore(sample_id, pose, False, 0.0, math.pi / 2))
            continue
        pairs = pair_scores(pose_to_rectangle(pose), truths)
        matched, best_j, best_a = score_from_pairs(pairs, cfg)
        matched_count += matched
        per_sample.append(SampleScore(sample_id, pose, matched, best_j, best_a))
    return EvalResult(
        accuracy=matched_count / len(ids),
        per_sample=per_sample,
        config=cfg,
        mean_inference_ms=mean_inference_ms,
    )


def evaluate_model(
    model: GraspNetwork,
    samples: list[GraspSample],
    ids: list[str],
    cfg: MetricConfig = MetricConfig(),
    encoder_cfg: EncoderConfig = EncoderConfig(),
    input_size: int = 320,
    warmup: int = 10,
) -> EvalResult:
    if not ids:
        raise ValueError("empty test split")
    poses, mean_ms = predict_poses(model, samples, ids, encoder_cfg, input_size, warmup)
    return evaluate_predictions(poses, samples, ids, cfg, input_size, mean_ms)


def sweep(
    poses: dict[str, GraspPose | None],
    samples: list[GraspSample],
    ids: list[str],
    jaccard_list: list[float],
    angle_list: list[float],
    input_size: int = 320,
) -> SweepResult:
    """Accuracy over the (jaccard, angle) threshold grid plus the two
    fixed-axis curves (jaccard at the default 30 deg, angle at the default
    0.25). Works purely from cached poses."""
    if not jaccard_list or not angle_list:
        raise ValueError("threshold lists must be non-empty")
    by_id = {s.source_id: s for s in samples}
    all_pairs = []
    for sample_id in ids:
        pose = poses.get(sample_id)
        truths = project_rects(by_id[sample_id], input_size)
        if pose is None or not truths:
            all_pairs.append([])
        else:
            all_pairs.append(pair_scores(pose_to_rectangle(pose), truths))

    def accuracy(cfg: MetricConfig) -> float:
        hits = sum(score_from_pairs(p, cfg)[0] for p in all_pairs)
        return hits / len(ids)

    grid = {}
    for j in jaccard_list:
        for a in angle_list:
            grid[(j, a)] = accuracy(MetricConfig(j, a))
    default = MetricConfig()
    jaccard_curve = [(j, accuracy(MetricConfig(j, default.angle_threshold))) for j in jaccard_list]
    angle_curve = [(a, accuracy(MetricConfig(default.jaccard_threshold, a))) for a in angle_list]
    return SweepResult(grid=grid, jaccard_curve=jaccard_curve, angle_curve=angle_curve)


ABLATION_VARIANTS = {
    "full": {"gaussian_encoding": True, "feature_fusion": True},
    "no_gaussian": {"gaussian_encoding": False, "feature_fusion": True},
    "no_fusion": {"gaussian_encoding": True, "feature_fusion": False},
    "plain": {"gaussian_encoding": False, "feature_fusion": False},
}


def ablate(
    samples: list[GraspSample],
    split: tuple[list[str], list[str]],
    variants: dict[str, dict[str, bool]],
    metric_grid: list[MetricConfig],
    net_cfg: NetworkConfig,
    train_cfg,
    encoder_cfg: EncoderConfig,
    workdir,
) -> dict[str, dict[tuple[float, float], float]]:
    """Train and score each variant under identical seeds.

    Gaussian encoding off means uniform labels; fusion off replaces the
    enhancement blocks with identity pass-throughs. Returns accuracy per
    variant per metric config.
    """
    from pathlib import Path
    from .training import train
    from .network import load_checkpoint

    results: dict[str, dict[tuple[float, float], float]] = {}
    for name, toggles in variants.items():
        v_net = replace(net_cfg, use_fusion=toggles.get("feature_fusion", True))
        v_enc = replace(
            encoder_cfg,
            encoding="gaussian" if toggles.get("gaussian_encoding", True) else "uniform",
        )
        v_dir = Path(workdir) / name
        outcome = train(samples, split, v_net, train_cfg, v_enc, out_dir=v_dir)
        model, _ = load_checkpoint(outcome.checkpoint_best)
        _, test_ids = split
        ids = test_ids if test_ids else split[0]
        poses, _ = predict_poses(model, samples, ids, v_enc, train_cfg.input_size, warmup=0)
        results[name] = {
            (cfg.jaccard_threshold, cfg.angle_threshold): evaluate_predictions(
                poses, samples, ids, cfg, train_cfg.input_size
            ).accuracy
            for cfg in metric_grid
        }
    return results


def save_predictions(path, poses: dict[str, GraspPose | None], meta: dict | None = None):
    """JSON prediction cache: deterministic key order, full float precision."""
    payload = {
        "meta": meta or {},
        "poses": {
            k: None
            if p is None
            else {"x": p.center[0], "y": p.center[1], "angle": p.angle, "width": p.width,
                  "quality": p.quality}
            for k, p in poses.items()
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)


def load_predictions(path) -> tuple[dict[str, GraspPose | None], dict]:
    with open(path) as f:
        payload = json.load(f)
    poses = {
        k: None if v is None else GraspPose((v["x"], v["y"]), v["angle"], v["width"], v["quality"])
        for k, v in payload["poses"].items()
    }
    return poses, payload.get("meta", {})


def result_to_json(result: EvalResult) -> str:
    payload = {
        "accuracy": result.accuracy,
        "jaccard_threshold": result.config.jaccard_threshold,
        "angle_threshold_deg": math.degrees(result.config.angle_threshold),
        "mean_inference_ms": result.mean_inference_ms,
        "per_sample": [
            {
                "id": s.sample_id,
                "matched": s.matched,
                "best_jaccard": s.best_jaccard,
                "best_angle_diff_deg": math.degrees(s.best_angle_diff),
                "pose": None
                if s.pose is None
                else {
                    "x": s.pose.center[0], "y": s.pose.center[1],
                    "angle": s.pose.angle, "width": s.pose.width, "quality": s.pose.quality,
                },
            }
            for s in result.per_sample
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=1)


def write_result_csv(path, result: EvalResult):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "matched", "best_jaccard", "best_angle_diff_deg", "quality"])
        for s in result.per_sample:
            writer.writerow(
                [
                    s.sample_id,
                    int(s.matched),
                    "%.10g" % s.best_jaccard,
                    "%.10g" % math.degrees(s.best_angle_diff),
                    "" if s.pose is None else "%.10g" % s.pose.quality,
                ]
            )


def write_sweep_csv(path, result: SweepResult):
    """Grid rows under the documented header jaccard,angle_deg,accuracy."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["jaccard", "angle_deg", "accuracy"])
        for (j, a), acc in sorted(result.grid.items()):
            writer.writerow(["%.10g" % j, "%.10g" % math.degrees(a), "%.10g" % acc])


def sweep_to_json(result: SweepResult) -> str:
    payload = {
        "grid": [
            {"jaccard": j, "angle_deg": math.degrees(a), "accuracy": acc}
            for (j, a), acc in sorted(result.grid.items())
        ],
        "jaccard_curve": [
            {"jaccard": j, "accuracy": acc} for j, acc in result.jaccard_curve
        ],
        "angle_curve": [
            {"angle_deg": math.degrees(a), "accuracy": acc} for a, acc in result.angle_curve
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=1)
