"""CLI contract: pipeline smoke, exit codes, schema strictness, provenance."""

import json

import numpy as np
import pytest

from vidssl.cli import main

PRETRAIN_CONFIG = {
    "views": {
        "global_frames": 4,
        "local_frame_choices": [2],
        "global_size": [32, 32],
        "local_size": [16, 16],
        "num_global": 2,
        "num_local_spatial": 2,
    },
    "backbone": {
        "patch_size": 8,
        "embed_dim": 32,
        "depth": 2,
        "num_heads": 2,
        "max_spatial_tokens": 16,
        "max_temporal_tokens": 4,
        "proj_hidden_dim": 32,
        "proj_output_dim": 16,
    },
    "distill": {},
    "schedule": {"total_epochs": 1, "warmup_epochs": 0},
    "batch_size": 2,
    "seed": 1,
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> pretrain -> probe -> eval artifacts shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "pretrain.json"
    config_path.write_text(json.dumps(PRETRAIN_CONFIG))
    assert main([
        "synth", "--out", str(root / "data"), "--num-train", "4", "--num-test", "2",
        "--classes", "2", "--frames", "8", "--size", "32", "--seed", "4",
    ]) == 0
    assert main([
        "pretrain", "--config", str(config_path),
        "--data", str(root / "data/train/manifest.jsonl"), "--out", str(root / "run"),
    ]) == 0
    assert main([
        "probe", "--checkpoint", str(root / "run/checkpoint_final.pt"),
        "--manifest", str(root / "data/train/manifest.jsonl"),
        "--eval-manifest", str(root / "data/test/manifest.jsonl"),
        "--out", str(root / "probe"), "--epochs", "3",
    ]) == 0
    assert main([
        "eval", "--pred", str(root / "probe/predictions.json"),
        "--manifest", str(root / "data/test/manifest.jsonl"),
        "--out", str(root / "report.json"),
    ]) == 0
    return root


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        assert (pipeline / "run/checkpoint_final.pt").exists()
        assert (pipeline / "run/train_log.jsonl").exists()
        assert (pipeline / "probe/classifier.npz").exists()
        assert (pipeline / "probe/predictions.json").exists()
        report = json.loads((pipeline / "report.json").read_text())
        assert report["sample_count"] == 2
        assert 0.0 <= report["mca"] <= 1.0

    def test_prediction_dump_schema(self, pipeline):
        dump = json.loads((pipeline / "probe/predictions.json").read_text())
        assert dump["schema_version"] == 1
        assert set(dump["predictions"]) == {"test_00000", "test_00001"}
        entry = dump["predictions"]["test_00000"]
        assert len(entry["labels"]) == 1
        assert len(entry["scores"]) == 2

    def test_provenance_stamped(self, pipeline):
        for sub in ("data", "run", "probe"):
            record = json.loads((pipeline / sub / "provenance.json").read_text())
            assert record["config_hash"]
            assert record["version"].startswith("vidssl-")

    def test_viz_dump_views(self, pipeline, tmp_path):
        out = tmp_path / "views"
        code = main([
            "viz", "dump-views", "--manifest", str(pipeline / "data/train/manifest.jsonl"),
            "--config", str(pipeline / "pretrain.json"), "--out", str(out),
        ])
        assert code == 0
        strips = list(out.glob("*.png"))
        assert len(strips) == 2 + 1 + 2  # globals + local temporal + local spatial

    def test_viz_attention(self, pipeline, tmp_path):
        out = tmp_path / "attn"
        code = main([
            "viz", "attention", "--checkpoint", str(pipeline / "run/checkpoint_final.pt"),
            "--manifest", str(pipeline / "data/test/manifest.jsonl"),
            "--k", "3", "--out", str(out),
        ])
        assert code == 0
        overlays = list(out.glob("test_00000_f*.png"))
        assert len(overlays) == 4  # one per sampled eval frame
        locations = json.loads(next(out.glob("*_locations.json")).read_text())
        assert all(0 <= l["weight"] <= 1 for l in locations)


class TestExitCodes:
    def test_unknown_flag_gives_usage_and_exit_1(self, capsys):
        assert main(["synth", "--bogus"]) == 1
        err = capsys.readouterr().err
        assert "usage" in err.lower()

    def test_eval_with_mismatched_manifest(self, pipeline, capsys):
        code = main([
            "eval", "--pred", str(pipeline / "probe/predictions.json"),
            "--manifest", str(pipeline / "data/train/manifest.jsonl"),
        ])
        assert code == 1
        assert "missing" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, pipeline, tmp_path, capsys):
        bad = dict(PRETRAIN_CONFIG)
        bad["learning_rate"] = 0.1  # not a PretrainConfig field
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        code = main([
            "pretrain", "--config", str(path),
            "--data", str(pipeline / "data/train/manifest.jsonl"),
            "--out", str(tmp_path / "run"),
        ])
        assert code == 1
        assert "unknown keys" in capsys.readouterr().err

    def test_missing_manifest_exit_1(self, tmp_path):
        assert main(["eval", "--pred", "x.json", "--manifest", str(tmp_path / "none.jsonl")]) == 1


class TestDumpSchedules:
    def test_row_count_matches_total_steps(self, pipeline, tmp_path):
        csv_path = tmp_path / "sched.csv"
        code = main([
            "pretrain", "--config", str(pipeline / "pretrain.json"),
            "--data", str(pipeline / "data/train/manifest.jsonl"),
            "--out", str(tmp_path / "run"), "--dump-schedules", str(csv_path),
        ])
        assert code == 0
        rows = csv_path.read_text().strip().splitlines()
        assert rows[0] == "step,lr,wd,ema_momentum"
        assert len(rows) - 1 == 2  # 1 epoch x ceil(4/2) steps

    def test_schedule_values_valid(self, pipeline, tmp_path):
        csv_path = tmp_path / "sched.csv"
        main([
            "pretrain", "--config", str(pipeline / "pretrain.json"),
            "--data", str(pipeline / "data/train/manifest.jsonl"),
            "--out", str(tmp_path / "run"), "--dump-schedules", str(csv_path),
        ])
        body = np.loadtxt(csv_path, delimiter=",", skiprows=1).reshape(-1, 4)
        assert (body[:, 1] >= 0).all()
        assert (body[:, 2] >= 0.04 - 1e-12).all() and (body[:, 2] <= 0.1 + 1e-12).all()
