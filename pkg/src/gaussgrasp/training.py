"""Multi-scale smooth-L1 objective and the seeded training loop.

The loss at each scale sums the smooth-L1 error over the quality, angle and
width planes, each group normalized by its pixel count so the three decoder
scales contribute comparably; the total is the plain mean over scales.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .codec import EncoderConfig, encode_pyramid
from .dataset import GraspSample, project_rects, random_augment, to_network_input
from .network import GraspNetwork, HeadOutput, NetworkConfig, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 1e-3
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    smooth_l1_sigma: float = 1.0
    plateau_patience: int = 10
    plateau_rel_tol: float = 1e-3
    lr_decay_factor: float = 0.1
    augment_count: int = 8
    input_size: int = 320

    def __post_init__(self):
        if self.lr_initial <= 0.0:
            raise ValueError("lr_initial must be positive")
        if not (0.0 < self.lr_decay_factor < 1.0):
            raise ValueError("lr_decay_factor must be in (0, 1)")


@dataclass
class LossReport:
    total: float
    per_scale: list[float]
    per_component: list[dict[str, float]] = field(default_factory=list)


def smooth_l1(x, sigma: float = 1.0):
    """Smooth L1: (sigma*x)^2 / 2 below |x| = 1, |x| - 0.5 / sigma^2 above.

    Continuous at the switch only for sigma = 1, which is the default; other
    values keep the stated branch rule. Accepts floats or tensors.
    """
    if torch.is_tensor(x):
        return torch.where(x.abs() < 1.0, 0.5 * (sigma * x) ** 2, x.abs() - 0.5 / sigma**2)
    if abs(x) < 1.0:
        return 0.5 * (sigma * x) ** 2
    return abs(x) - 0.5 / sigma**2


def scale_loss(
    pred: HeadOutput,
    target: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    sigma: float = 1.0,
):
    """Loss of one scale; returns (tensor, {component: float}).

    target is (quality, angle, width) with shapes matching the head output.
    Every component is the smooth-L1 sum over its plane group divided by that
    group's own element count, so the three scales and the three components
    enter on a comparable footing.
    """
    tq, ta, tw = target
    if pred.quality.shape != tq.shape or pred.angle.shape != ta.shape or pred.width.shape != tw.shape:
        raise ValueError(
            f"prediction/target shape mismatch: {tuple(pred.quality.shape)} vs {tuple(tq.shape)}"
        )
    q = smooth_l1(pred.quality - tq, sigma).sum() / tq.numel()
    a = smooth_l1(pred.angle - ta, sigma).sum() / ta.numel()
    w = smooth_l1(pred.width - tw, sigma).sum() / tw.numel()
    total = q + a + w
    return total, {"quality": q.item(), "angle": a.item(), "width": w.item()}


def total_loss(
    preds: list[HeadOutput],
    targets: list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]],
    sigma: float = 1.0,
):
    """Mean of the three scale losses; returns (tensor, LossReport)."""
    if len(preds) != len(targets):
        raise ValueError("prediction and target pyramids differ in length")
    scale_terms = []
    per_scale = []
    per_component = []
    for pred, target in zip(preds, targets):
        term, components = scale_loss(pred, target, sigma)
        scale_terms.append(term)
        per_scale.append(term.item())
        per_component.append(components)
    loss = sum(scale_terms) / len(scale_terms)
    report = LossReport(
        total=float(np.mean(per_scale)), per_scale=per_scale, per_component=per_component
    )
    return loss, report


def encode_targets(
    rect_lists, size: int, encoder_cfg: EncoderConfig, dtype=torch.float32
) -> list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """Stack per-sample label pyramids into per-scale target tensors."""
    per_scale = [[], [], []]
    for rects in rect_lists:
        pyramid = encode_pyramid(rects, size, size, encoder_cfg)
        for i, maps in enumerate(pyramid):
            per_scale[i].append(
                (
                    torch.from_numpy(maps.quality[None]).to(dtype),
                    torch.from_numpy(maps.angle).to(dtype),
                    torch.from_numpy(maps.width[None]).to(dtype),
                )
            )
    return [
        tuple(torch.stack([s[j] for s in scale_list]) for j in range(3))
        for scale_list in per_scale
    ]


@dataclass
class TrainResult:
    checkpoint_best: Path
    checkpoint_last: Path
    metrics_path: Path
    log_rows: list[tuple]
    best_accuracy: float


class _PlateauScheduler:
    """Cuts the learning rate by `factor` when the running mean of the last
    `patience` batch losses has not improved for `patience` batches; fires at
    most once per epoch."""

    def __init__(self, optimizer, patience: int, rel_tol: float, factor: float):
        self.optimizer = optimizer
        self.patience = patience
        self.rel_tol = rel_tol
        self.factor = factor
        self.window: deque[float] = deque(maxlen=patience)
        self.best = math.inf
        self.stale = 0
        self.fired_this_epoch = False

    def start_epoch(self):
        self.fired_this_epoch = False

    def step(self, batch_loss: float):
        self.window.append(batch_loss)
        if len(self.window) < self.patience:
            return
        mean = sum(self.window) / len(self.window)
        if mean < self.best * (1.0 - self.rel_tol):
            self.best = mean
            self.stale = 0
        else:
            self.stale += 1
        if self.stale >= self.patience and not self.fired_this_epoch:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.factor
            self.stale = 0
            self.best = mean  # fresh baseline for the reduced rate
            self.fired_this_epoch = True

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]


def train(
    samples: list[GraspSample],
    split: tuple[list[str], list[str]],
    net_cfg: NetworkConfig = NetworkConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    encoder_cfg: EncoderConfig = EncoderConfig(),
    out_dir=".",
    metric_cfg=None,
) -> TrainResult:
    """Seeded training run; writes best/last checkpoints and a metrics TSV
    (epoch, lr, train_loss, val_accuracy) under out_dir."""
    from .evaluation import evaluate_model  # lazy: evaluation imports network
    from .geometry import MetricConfig

    train_ids, test_ids = split
    if not train_ids:
        raise ValueError("empty training split")
    by_id = {s.source_id: s for s in samples}
    train_samples = [by_id[i] for i in train_ids]
    val_ids = test_ids if test_ids else train_ids
    metric_cfg = metric_cfg or MetricConfig()

    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    model = GraspNetwork(net_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr_initial)
    scheduler = _PlateauScheduler(
        optimizer, train_cfg.plateau_patience, train_cfg.plateau_rel_tol,
        train_cfg.lr_decay_factor,
    )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "checkpoint_best.bin"
    last_path = out_dir / "checkpoint_last.bin"
    metrics_path = out_dir / "metrics.tsv"

    size = train_cfg.input_size
    log_rows = []
    best_accuracy = -1.0
    for epoch in range(train_cfg.epochs):
        scheduler.start_epoch()
        epoch_samples = list(train_samples)
        for s in train_samples:
            epoch_samples.extend(random_augment(s, rng) for _ in range(train_cfg.augment_count))
        order = rng.permutation(len(epoch_samples))

        model.train()
        epoch_losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [epoch_samples[i] for i in order[start : start + train_cfg.batch_size]]
            inputs = torch.from_numpy(np.stack([to_network_input(s, size) for s in batch]))
            rect_lists = [project_rects(s, size) for s in batch]
            if any(not r for r in rect_lists):
                continue  # crop pushed every center out; skip the batch
            targets = encode_targets(rect_lists, size, encoder_cfg)

            optimizer.zero_grad()
            preds = model(inputs)
            loss, _ = total_loss(preds, targets, train_cfg.smooth_l1_sigma)
            batch_loss = loss.item()
            if not math.isfinite(batch_loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: loss={batch_loss}"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(batch_loss)
            scheduler.step(batch_loss)

        model.eval()
        result = evaluate_model(
            model, samples, val_ids, metric_cfg, encoder_cfg, input_size=size, warmup=0
        )
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else math.nan
        log_rows.append((epoch, scheduler.lr, train_loss, result.accuracy))
        if result.accuracy > best_accuracy:
            best_accuracy = result.accuracy
            save_checkpoint(best_path, model, {"epoch": epoch, "val_accuracy": result.accuracy})
        save_checkpoint(last_path, model, {"epoch": epoch, "val_accuracy": result.accuracy})

    with open(metrics_path, "w") as f:
        f.write("epoch\tlr\ttrain_loss\tval_accuracy\n")
        for row in log_rows:
            f.write("%d\t%.10g\t%.10g\t%.10g\n" % row)
    return TrainResult(best_path, last_path, metrics_path, log_rows, best_accuracy)
