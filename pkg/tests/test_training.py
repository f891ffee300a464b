import numpy as np
import pytest
import torch

from gaussgrasp.codec import EncoderConfig
from gaussgrasp.network import NetworkConfig
from gaussgrasp.training import (
    TrainConfig,
    _PlateauScheduler,
    scale_loss,
    smooth_l1,
    total_loss,
    train,
)


class TestSmoothL1:
    def test_zero(self):
        assert smooth_l1(0.0) == 0.0

    def test_quadratic_branch(self):
        assert smooth_l1(0.5) == pytest.approx(0.125)

    def test_linear_branch(self):
        assert smooth_l1(2.0) == pytest.approx(1.5)

    def test_continuous_at_switch_for_unit_sigma(self):
        below = smooth_l1(1.0 - 1e-9)
        above = smooth_l1(1.0 + 1e-9)
        assert abs(below - 0.5) < 1e-8
        assert abs(above - 0.5) < 1e-8

    def test_tensor_matches_scalar(self):
        xs = torch.tensor([-2.0, -0.7, 0.0, 0.3, 1.5], dtype=torch.float64)
        got = smooth_l1(xs)
        want = torch.tensor([smooth_l1(float(v)) for v in xs], dtype=torch.float64)
        assert torch.allclose(got, want)

    def test_sigma_scales_quadratic(self):
        assert smooth_l1(0.5, sigma=2.0) == pytest.approx(0.5 * (2.0 * 0.5) ** 2)
        assert smooth_l1(3.0, sigma=2.0) == pytest.approx(3.0 - 0.5 / 4.0)


def head_like(q, a, w):
    from gaussgrasp.network import HeadOutput

    return HeadOutput(quality=q, angle=a, width=w)


def random_pair(rng_seed, b=1, k=18, h=8, w=8):
    g = torch.Generator().manual_seed(rng_seed)
    def t(*shape):
        return torch.rand(*shape, generator=g, dtype=torch.float64)
    pred = head_like(t(b, 1, h, w), t(b, k, h, w) * 2 - 1, t(b, 1, h, w))
    target = (t(b, 1, h, w), t(b, k, h, w), t(b, 1, h, w))
    return pred, target


class TestScaleLoss:
    def test_zero_when_equal(self):
        pred, _ = random_pair(0)
        target = (pred.quality.clone(), pred.angle.clone(), pred.width.clone())
        loss, components = scale_loss(pred, target)
        assert loss.item() == 0.0
        assert components == {"quality": 0.0, "angle": 0.0, "width": 0.0}

    def test_single_pixel_quality_error(self):
        h = w = 8
        q = torch.zeros(1, 1, h, w, dtype=torch.float64)
        a = torch.zeros(1, 18, h, w, dtype=torch.float64)
        wd = torch.zeros(1, 1, h, w, dtype=torch.float64)
        pred = head_like(q.clone(), a, wd)
        pred.quality[0, 0, 3, 4] = 0.5
        loss, components = scale_loss(pred, (q, a, wd))
        assert components["quality"] == pytest.approx(0.125 / (h * w))
        assert components["angle"] == 0.0

    def test_matches_elementwise_loop_oracle(self):
        pred, target = random_pair(3, b=2, h=6, w=5)
        loss, _ = scale_loss(pred, target)
        total = 0.0
        for p, t in zip(pred, target):
            diff = (p - t).numpy().ravel()
            total += sum(smooth_l1(float(x)) for x in diff) / p.numel()
        assert loss.item() == pytest.approx(total, abs=1e-6)

    def test_shape_mismatch_rejected(self):
        pred, target = random_pair(4)
        bad = (target[0][:, :, :4, :], target[1], target[2])
        with pytest.raises(ValueError, match="mismatch"):
            scale_loss(pred, bad)


class TestTotalLoss:
    def make_pyramid(self, seed):
        preds, targets = [], []
        for i, s in enumerate((8, 16, 32)):
            p, t = random_pair(seed + i, h=s, w=s)
            preds.append(p)
            targets.append(t)
        return preds, targets

    def test_zero_when_equal(self):
        preds, _ = self.make_pyramid(0)
        targets = [(p.quality.clone(), p.angle.clone(), p.width.clone()) for p in preds]
        loss, report = total_loss(preds, targets)
        assert loss.item() == 0.0
        assert report.total == 0.0

    def test_mean_of_scales(self):
        preds, targets = self.make_pyramid(1)
        # zero out two scales
        for i in (0, 1):
            targets[i] = (preds[i].quality.clone(), preds[i].angle.clone(), preds[i].width.clone())
        loss, report = total_loss(preds, targets)
        assert report.per_scale[0] == 0.0
        assert report.per_scale[1] == 0.0
        assert loss.item() == pytest.approx(report.per_scale[2] / 3)

    def test_report_total_is_mean_bitwise(self):
        preds, targets = self.make_pyramid(2)
        _, report = total_loss(preds, targets)
        assert report.total == float(np.mean(report.per_scale))

    def test_nonnegative_and_zero_iff_equal(self):
        preds, targets = self.make_pyramid(3)
        loss, _ = total_loss(preds, targets)
        assert loss.item() > 0.0

    def test_batch_permutation_invariant(self):
        preds, targets = [], []
        for i, s in enumerate((8, 16, 32)):
            p, t = random_pair(10 + i, b=4, h=s, w=s)
            preds.append(p)
            targets.append(t)
        loss, _ = total_loss(preds, targets)
        perm = torch.tensor([2, 0, 3, 1])
        preds_p = [head_like(p.quality[perm], p.angle[perm], p.width[perm]) for p in preds]
        targets_p = [(q[perm], a[perm], w[perm]) for q, a, w in targets]
        loss_p, _ = total_loss(preds_p, targets_p)
        assert loss_p.item() == pytest.approx(loss.item(), rel=1e-12)


class TestPlateauScheduler:
    def make(self, patience=10):
        net = torch.nn.Linear(2, 2)
        opt = torch.optim.Adam(net.parameters(), lr=1e-3)
        return _PlateauScheduler(opt, patience, 1e-3, 0.1), opt

    def test_decays_once_per_epoch_on_stall(self):
        sched, opt = self.make()
        sched.start_epoch()
        for _ in range(10):
            sched.step(1.0)  # fill the window
        for _ in range(10):
            sched.step(1.0)  # stale accumulates
        assert opt.param_groups[0]["lr"] == pytest.approx(1e-4)
        for _ in range(30):
            sched.step(1.0)
        assert opt.param_groups[0]["lr"] == pytest.approx(1e-4)  # once per epoch
        sched.start_epoch()
        for _ in range(10):
            sched.step(1.0)
        assert opt.param_groups[0]["lr"] == pytest.approx(1e-5)

    def test_no_decay_while_improving(self):
        sched, opt = self.make()
        sched.start_epoch()
        loss = 1.0
        for _ in range(60):
            sched.step(loss)
            loss *= 0.99
        assert opt.param_groups[0]["lr"] == pytest.approx(1e-3)


class TestTrainLoop:
    def micro_config(self, **kw):
        defaults = dict(epochs=2, batch_size=4, augment_count=0, input_size=64,
                        seed=0, plateau_patience=50)
        defaults.update(kw)
        return TrainConfig(**defaults)

    def test_writes_checkpoints_and_log(self, cornell_samples, tmp_path):
        ids = [s.source_id for s in cornell_samples]
        result = train(
            cornell_samples, (ids[:4], ids[4:6]),
            NetworkConfig(base_channels=8), self.micro_config(), EncoderConfig(),
            out_dir=tmp_path,
        )
        assert result.checkpoint_best.exists()
        assert result.checkpoint_last.exists()
        lines = result.metrics_path.read_text().splitlines()
        assert lines[0] == "epoch\tlr\ttrain_loss\tval_accuracy"
        assert len(lines) == 3  # header + 2 epochs

    def test_seeded_runs_identical(self, cornell_samples, tmp_path):
        ids = [s.source_id for s in cornell_samples]
        kw = dict(
            samples=cornell_samples, split=(ids[:4], ids[4:6]),
            net_cfg=NetworkConfig(base_channels=8),
            train_cfg=self.micro_config(), encoder_cfg=EncoderConfig(),
        )
        r1 = train(out_dir=tmp_path / "a", **kw)
        r2 = train(out_dir=tmp_path / "b", **kw)
        assert r1.metrics_path.read_text() == r2.metrics_path.read_text()

    def test_empty_split_rejected(self, cornell_samples, tmp_path):
        with pytest.raises(ValueError, match="empty training split"):
            train(cornell_samples, ([], []), NetworkConfig(base_channels=8),
                  self.micro_config(), out_dir=tmp_path)

    def test_lr_after_one_plateau_event(self):
        # 0.001 * 0.1, the contract value
        cfg = TrainConfig()
        assert cfg.lr_initial * cfg.lr_decay_factor == pytest.approx(1e-4)
