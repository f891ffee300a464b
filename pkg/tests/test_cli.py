import json
import math

import numpy as np
import pytest

from gaussgrasp import cli
from gaussgrasp.codec import EncoderConfig, encode, load_maps
from gaussgrasp.config import RunConfig, apply_overrides, load_run_config, make_run_dir
from gaussgrasp.evaluation import save_predictions
from gaussgrasp.geometry import GraspPose, GraspRectangle
from gaussgrasp.plots import angle_plane, heatmap_image, save_map_heatmaps, save_overlay


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.encoder.num_angle_bins == 18
        assert cfg.metric.jaccard_threshold == 0.25

    def test_file_and_flag_precedence(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment\n"
            "seed = 7\n"
            "encoder.angle_sigma = 2.0\n"
            "train.epochs = 3\n"
        )
        cfg = load_run_config(path, {"seed": "9"})
        assert cfg.seed == 9  # flag wins
        assert cfg.encoder.angle_sigma == 2.0
        assert cfg.train.epochs == 3

    def test_unknown_keys_listed(self):
        with pytest.raises(ValueError) as err:
            apply_overrides(RunConfig(), {"trian.epochs": "3", "encoder.sgima": "1"})
        assert "trian.epochs" in str(err.value)
        assert "encoder.sgima" in str(err.value)

    def test_bool_coercion(self):
        cfg = apply_overrides(RunConfig(), {"net.use_fusion": "false"})
        assert cfg.net.use_fusion is False

    def test_run_dir_echoes_config(self, tmp_path):
        cfg = RunConfig(seed=5)
        run_dir = make_run_dir(tmp_path, cfg)
        echoed = (run_dir / "config.txt").read_text()
        assert "seed = 5" in echoed
        assert "encoder.num_angle_bins = 18" in echoed
        assert cfg.hash() in run_dir.name

    def test_hash_tracks_values(self):
        assert RunConfig(seed=1).hash() != RunConfig(seed=2).hash()

    def test_jacquard_dataset_defaults(self):
        cfg = cli._with_dataset_defaults(RunConfig(dataset="jacquard"))
        assert cfg.train_fraction == pytest.approx(5 / 6)
        assert cfg.train.augment_count == 0
        # explicit values win over the dataset default
        explicit = apply_overrides(
            RunConfig(dataset="jacquard"), {"train.augment_count": "4"}
        )
        assert cli._with_dataset_defaults(explicit).train.augment_count == 4


class TestPlots:
    def test_heatmap_fixed_range(self):
        img_low = np.asarray(heatmap_image(np.zeros((8, 8))))
        img_high = np.asarray(heatmap_image(np.ones((8, 8))))
        assert (img_low == img_low[0, 0]).all()  # uniform at colormap minimum
        assert not np.array_equal(img_low[0, 0], img_high[0, 0])

    def test_angle_plane_masked_by_quality(self):
        maps = encode([GraspRectangle((16, 16), math.pi / 2, 20, 10)], 32, 32)
        plane = angle_plane(maps)
        assert plane[16, 16] == pytest.approx((9 + 0.5) / 18)
        assert plane[0, 0] == 0.0

    def test_heatmaps_written_and_byte_stable(self, tmp_path):
        maps = encode([GraspRectangle((16, 16), 0.3, 20, 10)], 32, 32)
        p1 = save_map_heatmaps(maps, tmp_path / "a", prefix="s")
        p2 = save_map_heatmaps(maps, tmp_path / "b", prefix="s")
        assert [p.name for p in p1] == ["s_quality.png", "s_width.png", "s_angle.png"]
        for a, b in zip(p1, p2):
            assert a.read_bytes() == b.read_bytes()

    def test_overlay_byte_stable(self, tmp_path, rng):
        rgb = rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
        poses = [GraspPose((32, 32), 0.4, 20, 0.9)]
        truths = [GraspRectangle((30, 30), 0.5, 22, 12)]
        save_overlay(rgb, poses, tmp_path / "one.png", truths)
        save_overlay(rgb, poses, tmp_path / "two.png", truths)
        assert (tmp_path / "one.png").read_bytes() == (tmp_path / "two.png").read_bytes()


def run_cli(args):
    return cli.main(args)


class TestCommands:
    def test_encode_writes_caches(self, cornell_root, tmp_path):
        out = tmp_path / "runs"
        code = run_cli([
            "encode", "--dataset", "cornell", "--root", str(cornell_root),
            "--out", str(out), "--set", "train.input_size=64",
        ])
        assert code == 0
        (run_dir,) = list(out.iterdir())
        maps = list((run_dir / "maps").glob("*.gmaps"))
        assert len(maps) == 8
        pyramid, cfg_hash = load_maps(maps[0])
        assert [m.scale for m in pyramid] == [0.25, 0.5, 1.0]
        assert cfg_hash == EncoderConfig().hash()
        assert (run_dir / "manifest.tsv").exists()
        assert (run_dir / "config.txt").exists()

    def test_evaluate_with_prediction_cache(self, cornell_root, cornell_samples, tmp_path):
        from gaussgrasp.dataset import project_rects

        preds = tmp_path / "preds.json"
        poses = {}
        for s in cornell_samples:
            r = project_rects(s, 64)[0]
            poses[s.source_id] = GraspPose(r.center, r.angle, r.width, 1.0)
        save_predictions(preds, poses)
        out = tmp_path / "runs"
        code = run_cli([
            "evaluate", "--dataset", "cornell", "--root", str(cornell_root),
            "--out", str(out), "--predictions", str(preds),
            "--set", "train.input_size=64",
        ])
        assert code == 0
        (run_dir,) = list(out.iterdir())
        blob = json.loads((run_dir / "result.json").read_text())
        assert blob["accuracy"] == 1.0
        assert (run_dir / "result.csv").exists()

    def test_sweep_writes_curves_and_pngs(self, cornell_root, cornell_samples, tmp_path):
        from gaussgrasp.dataset import project_rects

        preds = tmp_path / "preds.json"
        poses = {}
        for s in cornell_samples:
            r = project_rects(s, 64)[0]
            poses[s.source_id] = GraspPose(r.center, r.angle, r.width, 1.0)
        save_predictions(preds, poses)
        out = tmp_path / "runs"
        code = run_cli([
            "sweep", "--dataset", "cornell", "--root", str(cornell_root),
            "--out", str(out), "--predictions", str(preds),
            "--set", "train.input_size=64",
        ])
        assert code == 0
        (run_dir,) = list(out.iterdir())
        lines = (run_dir / "sweep.csv").read_text().splitlines()
        assert lines[0] == "jaccard,angle_deg,accuracy"
        assert len(lines) == 1 + 5 * 5
        assert (run_dir / "sweep_jaccard.png").exists()
        assert (run_dir / "sweep_angle.png").exists()
        assert (run_dir / "sweep.json").exists()

    def test_visualize_from_labels(self, cornell_root, tmp_path):
        out = tmp_path / "runs"
        code = run_cli([
            "visualize", "--dataset", "cornell", "--root", str(cornell_root),
            "--out", str(out), "--set", "train.input_size=64",
        ])
        assert code == 0
        (run_dir,) = list(out.iterdir())
        names = {p.name for p in run_dir.glob("*.png")}
        assert any(n.endswith("_quality.png") for n in names)
        assert any(n.endswith("_width.png") for n in names)
        assert any(n.endswith("_angle.png") for n in names)
        assert any(n.endswith("_overlay.png") for n in names)

    def test_unknown_config_key_fails_with_message(self, cornell_root, tmp_path, capsys):
        code = run_cli([
            "encode", "--dataset", "cornell", "--root", str(cornell_root),
            "--out", str(tmp_path / "runs"), "--set", "train.epcohs=3",
        ])
        assert code == 1
        assert "train.epcohs" in capsys.readouterr().err

    def test_train_command_end_to_end(self, cornell_root, tmp_path):
        out = tmp_path / "runs"
        code = run_cli([
            "train", "--dataset", "cornell", "--root", str(cornell_root),
            "--out", str(out),
            "--set", "train.epochs=1", "--set", "train.input_size=64",
            "--set", "train.batch_size=4", "--set", "train.augment_count=0",
            "--set", "net.base_channels=8", "--set", "train_fraction=0.75",
        ])
        assert code == 0
        (run_dir,) = list(out.iterdir())
        assert (run_dir / "checkpoint_best.bin").exists()
        assert (run_dir / "checkpoint_last.bin").exists()
        assert (run_dir / "metrics.tsv").exists()
        assert (run_dir / "split_train.txt").exists()

    def test_dataset_dirs_never_mutated(self, cornell_root, tmp_path):
        before = sorted(p.name for p in cornell_root.rglob("*"))
        run_cli([
            "encode", "--dataset", "cornell", "--root", str(cornell_root),
            "--out", str(tmp_path / "runs"), "--set", "train.input_size=64",
        ])
        after = sorted(p.name for p in cornell_root.rglob("*"))
        assert before == after
