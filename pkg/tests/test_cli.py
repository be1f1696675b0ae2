"""Tests for the command-line interface."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from condlane.cli import main

BASE_CONFIG = """\
version: 1
model:
  variant: small
  height: 64
  width: 128
  omega: 2
train:
  lr: 3.0e-4
  batch_size: 4
  epochs: 1
  seed: 3
scene:
  seed: 9
  lane_count: [1, 2]
  curvature: [-15.0, 15.0]
  noise: 4.0
data:
  count: 6
"""


def write_config(tmp_path, text=BASE_CONFIG, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def read_manifest(run_dir: Path) -> dict:
    with open(run_dir / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One dataset + one short training run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root)
    data = root / "data"
    run = root / "run"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    return {"root": root, "config": cfg, "data": data, "run": run}


class TestGenData:
    def test_writes_images_labels_manifest(self, workspace):
        data = workspace["data"]
        manifest = read_manifest(data)
        assert manifest["count"] == 6
        assert len(manifest["samples"]) == 6
        for entry in manifest["samples"]:
            assert (data / entry["image"]).is_file()
            assert (data / entry["annotation"]).is_file()

    def test_category_histogram_matches_files(self, workspace):
        manifest = read_manifest(workspace["data"])
        histogram = {}
        for entry in manifest["samples"]:
            histogram[entry["category"]] = histogram.get(entry["category"], 0) + 1
        assert sum(histogram.values()) == 6

    def test_refuses_non_empty_dir(self, workspace, capsys):
        cfg = workspace["config"]
        code = main(["gen-data", "--config", str(cfg),
                     "--out", str(workspace["data"])])
        assert code == 1
        assert "--force" in capsys.readouterr().err

    def test_force_overwrites(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "d"
        assert main(["gen-data", "--config", str(cfg), "--out", str(out),
                     "--count", "1"]) == 0
        assert main(["gen-data", "--config", str(cfg), "--out", str(out),
                     "--count", "1", "--force"]) == 0

    def test_count_zero_empty_manifest(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "empty"
        assert main(["gen-data", "--config", str(cfg), "--out", str(out),
                     "--count", "0"]) == 0
        assert read_manifest(out)["samples"] == []

    def test_same_seed_same_bytes(self, tmp_path):
        cfg = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", "--config", str(cfg), "--out", str(a),
                     "--count", "3"]) == 0
        assert main(["gen-data", "--config", str(cfg), "--out", str(b),
                     "--count", "3"]) == 0
        assert tree_digest(a) == tree_digest(b)

    def test_invalid_config_named_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, BASE_CONFIG.replace("noise: 4.0",
                                                         "noise: -1.0"))
        assert main(["gen-data", "--config", str(cfg),
                     "--out", str(tmp_path / "x")]) == 1
        assert "noise" in capsys.readouterr().err


class TestTrain:
    def test_run_dir_is_self_describing(self, workspace):
        run = workspace["run"]
        manifest = read_manifest(run)
        assert manifest["command"] == "train"
        assert manifest["seed"] == 3
        assert manifest["config"]["model"]["height"] == 64
        assert manifest["checkpoints"] == ["checkpoints/init.npz",
                                           "checkpoints/final.npz"]
        for rel in manifest["checkpoints"]:
            assert (run / rel).is_file()
            assert (run / rel).with_suffix(".json").is_file()
        # 6 samples, batch 4, 1 epoch -> 2 steps
        assert [r["step"] for r in manifest["history"]] == [1, 2]

    def test_loss_log_components_and_identity(self, workspace):
        lines = (workspace["run"] / "loss_log.jsonl").read_text().splitlines()
        assert len(lines) == 2
        for line in lines:
            rec = json.loads(line)
            assert {"point", "row", "range", "offset", "state"} <= set(rec)
            weighted = (rec["point"] + rec["row"] + rec["range"]
                        + 0.4 * rec["offset"] + rec["state"])
            assert abs(rec["total"] - weighted) <= 1e-6

    def test_epochs_zero_initial_checkpoint_only(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG.replace("epochs: 1",
                                                         "epochs: 0"))
        run = tmp_path / "run0"
        assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
        manifest = read_manifest(run)
        assert manifest["checkpoints"] == ["checkpoints/init.npz"]
        assert manifest["history"] == []

    def test_resume_continues_step_counter(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG.replace("count: 6", "count: 4"))
        run = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
        first = read_manifest(run)["history"]
        assert [r["step"] for r in first] == [1]
        ckpt = run / "checkpoints" / "final.npz"
        assert main(["train", "--config", str(cfg), "--out", str(run),
                     "--resume", str(ckpt)]) == 0
        manifest = read_manifest(run)
        assert manifest["resumed_from"] == str(ckpt)
        assert [r["step"] for r in manifest["history"]] == [2]
        lines = (run / "loss_log.jsonl").read_text().splitlines()
        assert [json.loads(l)["step"] for l in lines] == [1, 2]

    def test_refuses_non_empty_without_resume(self, workspace, capsys):
        code = main(["train", "--config", str(workspace["config"]),
                     "--out", str(workspace["run"])])
        assert code == 1
        assert "--force" in capsys.readouterr().err

    def test_unknown_field_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, BASE_CONFIG + "  momentum: 0.9\n")
        assert main(["train", "--config", str(cfg),
                     "--out", str(tmp_path / "r")]) == 1
        assert "unknown field data.momentum" in capsys.readouterr().err

    def test_dataset_canvas_mismatch_rejected(self, workspace, tmp_path, capsys):
        wide = BASE_CONFIG.replace("width: 128", "width: 192")
        wide += f"  dir: {workspace['data']}\n"
        cfg = write_config(tmp_path, wide)
        assert main(["train", "--config", str(cfg),
                     "--out", str(tmp_path / "r")]) == 1
        assert "does not match model canvas" in capsys.readouterr().err

    def test_trains_from_dataset_dir(self, workspace, tmp_path):
        with_dir = BASE_CONFIG + f"  dir: {workspace['data']}\n"
        cfg = write_config(tmp_path, with_dir)
        run = tmp_path / "r"
        assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
        assert read_manifest(run)["dataset"] == str(workspace["data"])


class TestEval:
    def test_oracle_scores_perfectly(self, workspace, tmp_path):
        out = tmp_path / "report"
        assert main(["eval", "--data", str(workspace["data"]),
                     "--out", str(out), "--oracle"]) == 0
        manifest = read_manifest(out)
        assert manifest["oracle"] is True
        assert manifest["report"]["f1"] == 1.0
        assert manifest["report"]["fp"] == 0
        assert manifest["report"]["fn"] == 0
        assert manifest["row_accuracy"]["accuracy"] == 1.0

    def test_category_rows_sum_to_totals(self, workspace, tmp_path):
        out = tmp_path / "report"
        assert main(["eval", "--data", str(workspace["data"]),
                     "--out", str(out), "--oracle"]) == 0
        report = read_manifest(out)["report"]
        by_cat = report["by_category"]
        assert by_cat  # synthetic sets always carry categories
        for key in ("tp", "fp", "fn"):
            assert sum(sub[key] for sub in by_cat.values()) == report[key]

    def test_exit_zero_on_poor_scores(self, workspace, tmp_path, capsys):
        ckpt = workspace["run"] / "checkpoints" / "init.npz"
        out = tmp_path / "report"
        code = main(["eval", "--checkpoint", str(ckpt),
                     "--data", str(workspace["data"]), "--out", str(out)])
        assert code == 0
        manifest = read_manifest(out)
        assert manifest["report"]["f1"] < 1.0   # untrained weights
        assert "row_accuracy" in manifest
        assert "F1" in capsys.readouterr().out

    def test_checkpoint_dataset_mismatch_refused(self, workspace, tmp_path, capsys):
        wide = BASE_CONFIG.replace("width: 128", "width: 192")
        cfg = write_config(tmp_path, wide)
        data = tmp_path / "wide-data"
        assert main(["gen-data", "--config", str(cfg), "--out", str(data),
                     "--count", "2"]) == 0
        ckpt = workspace["run"] / "checkpoints" / "final.npz"
        code = main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                     "--out", str(tmp_path / "r")])
        assert code == 1
        assert "refusing to evaluate" in capsys.readouterr().err

    def test_checkpoint_required_without_oracle(self, workspace, tmp_path, capsys):
        code = main(["eval", "--data", str(workspace["data"]),
                     "--out", str(tmp_path / "r")])
        assert code == 1
        assert "--checkpoint" in capsys.readouterr().err


class TestInfer:
    def test_writes_overlays(self, workspace, tmp_path):
        data, run = workspace["data"], workspace["run"]
        ckpt = run / "checkpoints" / "final.npz"
        images = sorted(str(p) for p in (data / "images").glob("*.png"))[:2]
        out = tmp_path / "overlays"
        code = main(["infer", "--checkpoint", str(ckpt), "--out", str(out),
                     "--threshold", "0.05"] + images)
        assert code == 0
        manifest = read_manifest(out)
        assert len(manifest["images"]) == 2
        for entry in manifest["images"]:
            assert (out / entry["output"]).is_file()
            assert entry["lanes"] == len(entry["scores"])

    def test_zero_detections_annotated_copy(self, workspace, tmp_path):
        data, run = workspace["data"], workspace["run"]
        ckpt = run / "checkpoints" / "init.npz"
        image = sorted((data / "images").glob("*.png"))[0]
        out = tmp_path / "overlays"
        code = main(["infer", "--checkpoint", str(ckpt), "--out", str(out),
                     "--threshold", "0.999", str(image)])
        assert code == 0
        manifest = read_manifest(out)
        assert manifest["images"][0]["lanes"] == 0
        from condlane.viz import load_image
        original = load_image(image)
        overlay = load_image(out / image.name)
        assert overlay.shape == original.shape
        assert not np.array_equal(overlay, original)   # "0 lanes" text
        assert np.array_equal(overlay[:, 32:, :], original[:, 32:, :])

    def test_unreadable_input_warns(self, workspace, tmp_path, capsys):
        data, run = workspace["data"], workspace["run"]
        ckpt = run / "checkpoints" / "final.npz"
        bad = tmp_path / "bad.png"
        bad.write_text("not a png")
        good = sorted((data / "images").glob("*.png"))[0]
        out = tmp_path / "overlays"
        code = main(["infer", "--checkpoint", str(ckpt), "--out", str(out),
                     str(bad), str(good)])
        assert code == 0
        assert "unreadable" in capsys.readouterr().err
        assert (out / good.name).is_file()
        assert not (out / bad.name).exists()

    def test_all_unreadable_exits_nonzero(self, workspace, tmp_path, capsys):
        ckpt = workspace["run"] / "checkpoints" / "final.npz"
        bad = tmp_path / "bad.png"
        bad.write_text("still not a png")
        code = main(["infer", "--checkpoint", str(ckpt),
                     "--out", str(tmp_path / "o"), str(bad)])
        assert code == 1
        err = capsys.readouterr().err
        assert "unreadable" in err and "no input image" in err

    def test_wrong_size_input_warns(self, workspace, tmp_path, capsys):
        ckpt = workspace["run"] / "checkpoints" / "final.npz"
        import cv2
        small = tmp_path / "small.png"
        cv2.imwrite(str(small), np.zeros((16, 16), dtype=np.uint8))
        code = main(["infer", "--checkpoint", str(ckpt),
                     "--out", str(tmp_path / "o"), str(small)])
        assert code == 1
        assert "does not match model canvas" in capsys.readouterr().err


class TestParser:
    def test_missing_command_exits(self):
        with pytest.raises(SystemExit):
            main([])

    def test_help_lists_commands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for command in ("gen-data", "train", "eval", "infer"):
            assert command in out
