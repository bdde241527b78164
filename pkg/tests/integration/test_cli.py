"""End-to-end runs of the ``voxeldet`` commands on synthetic scenes."""
import json

import pytest

from src.cli.main import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from src.core.manifest import load_manifest
from src.core.suppression import Detection
from src.core.voxelgrid import load_volume
from src.formats.config import PRESETS, load_config
from src.formats.detections import DetectionSet, load_detections, save_detections
from src.formats.scene import load_scene


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--config", "scannet", "--views", "2", "--objects", "3", "--seed", "5",
                 "--out", str(out)]) == EXIT_OK
    return out


def perfect_detections(scene_path, out_path):
    scene = load_scene(scene_path)
    dets = [Detection(o.box, 0.9, o.class_id) for o in scene.objects]
    return save_detections(DetectionSet(dets, [scene.scene_id] * len(dets)), out_path)


def test_synth_writes_scene_and_manifest(synth_dir):
    scene = load_scene(synth_dir / "scene.json")
    assert len(scene.views) == 2
    assert len(scene.objects) == 3
    assert scene.grid == "scannet"
    manifest = load_manifest(synth_dir)
    assert manifest.command == "synth"
    assert manifest.config == "scannet"
    assert manifest.seed == 5
    assert [t.stage for t in manifest.timings] == ["synth"]


def test_synth_is_reproducible(tmp_path, synth_dir):
    again = tmp_path / "again"
    main(["synth", "--config", "scannet", "--views", "2", "--objects", "3", "--seed", "5", "--out", str(again)])
    assert (again / "scene.json").read_bytes() == (synth_dir / "scene.json").read_bytes()


def test_project_uses_scene_grid(tmp_path, synth_dir):
    out = tmp_path / "volume"
    assert main(["project", str(synth_dir / "scene.json"), "--out", str(out), "--workers", "2"]) == EXIT_OK
    volume = load_volume(out / "volume.vxvl")
    assert volume.spec.shape == PRESETS["scannet"].grid_spec().shape
    assert volume.channels == PRESETS["scannet"].stub_channels
    assert [t.stage for t in load_manifest(out).timings] == ["project", "aggregate"]


def test_project_is_reproducible(tmp_path, synth_dir):
    scene = str(synth_dir / "scene.json")
    main(["project", scene, "--out", str(tmp_path / "a"), "--workers", "1"])
    main(["project", scene, "--out", str(tmp_path / "b"), "--workers", "4"])
    assert (tmp_path / "a" / "volume.vxvl").read_bytes() == (tmp_path / "b" / "volume.vxvl").read_bytes()


def test_targets_indoor(tmp_path, synth_dir):
    out = tmp_path / "targets"
    assert main(["targets", str(synth_dir / "scene.json"), "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "targets.json").read_text(encoding="utf-8"))
    assert doc["head"] == "indoor"
    assert doc["counts"]["positive"] + doc["counts"]["negative"] == doc["num_locations"]
    assert doc["scene_id"] == "synth-0005"


def test_targets_outdoor_on_kitti_scene(tmp_path):
    synth = tmp_path / "kitti"
    assert main(["synth", "--config", "kitti", "--objects", "2", "--out", str(synth)]) == EXIT_OK
    out = tmp_path / "targets"
    assert main(["targets", str(synth / "scene.json"), "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "targets.json").read_text(encoding="utf-8"))
    assert doc["head"] == "outdoor"
    # every box with a positive-IoU anchor gets at least one positive
    assert {p["gt"] for p in doc["positives"]} == {0, 1}


def test_self_evaluation_is_perfect(tmp_path, synth_dir):
    dets = perfect_detections(synth_dir / "scene.json", tmp_path / "dets.json")
    out = tmp_path / "eval"
    assert main(["eval", str(dets), str(synth_dir / "scene.json"), "--config", "scannet", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["protocol"] == "indoor-map"
    for threshold in ("0.25", "0.5"):
        assert report["thresholds"][threshold]["mean_ap"] == pytest.approx(1.0)
    assert report["num_detections"] == 3


def test_nms_suppresses_overlap(tmp_path, scored_cars):
    dets = save_detections(DetectionSet.single_scene(scored_cars), tmp_path / "in.json")
    out = tmp_path / "nms"
    assert main(["nms", str(dets), "--threshold", "0.5", "--out", str(out)]) == EXIT_OK
    kept = load_detections(out / "detections.json")
    assert [d.score for d in kept.detections] == [0.9, 0.8]


def test_render_bev(tmp_path, synth_dir):
    out = tmp_path / "bev"
    assert main(["render-bev", str(synth_dir / "scene.json"), "--config", "scannet", "--png",
                 "--out", str(out)]) == EXIT_OK
    svg = (out / "bev.svg").read_text(encoding="utf-8")
    assert svg.count('<polygon class="gt"') == 3
    assert (out / "bev.png").exists()


def test_config_export(tmp_path):
    assert main(["config", "nuscenes", "--out", str(tmp_path)]) == EXIT_OK
    assert load_config(tmp_path / "nuscenes.ini") == PRESETS["nuscenes"]


def test_gradcheck(tmp_path):
    assert main(["gradcheck", "--points", "20", "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "gradcheck.json").read_text(encoding="utf-8"))
    assert doc["passed"]
    assert all(error <= 1e-4 for error in doc["max_relative_error"].values())


def test_missing_input_is_an_io_error(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["project", str(tmp_path / "absent.json"), "--out", str(out)]) == EXIT_IO
    assert "error: io:" in capsys.readouterr().err
    assert not (out / "manifest.json").exists()


def test_unknown_preset_is_a_validation_error(tmp_path, synth_dir, capsys):
    code = main(["project", str(synth_dir / "scene.json"), "--config", "waymo", "--out", str(tmp_path / "o")])
    assert code == EXIT_VALIDATION
    assert "error: parse:" in capsys.readouterr().err


def test_malformed_scene_is_a_validation_error(tmp_path):
    bad = tmp_path / "scene.json"
    bad.write_text('{"version": 1, "views": []}', encoding="utf-8")
    assert main(["targets", str(bad), "--config", "scannet", "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_ledger_records_successes_and_failures(tmp_path, synth_dir, capsys):
    ledger = str(tmp_path / "ledger" / "runs.db")
    scene = str(synth_dir / "scene.json")
    assert main(["project", scene, "--out", str(tmp_path / "v"), "--ledger", ledger]) == EXIT_OK
    assert main(["project", str(tmp_path / "absent.json"), "--out", str(tmp_path / "w"),
                 "--ledger", ledger]) == EXIT_IO
    capsys.readouterr()

    assert main(["runs", "--ledger", ledger]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    assert "\tproject\tscannet\t" in lines[0]
    assert "exit=0" in lines[0]
    assert "exit=3" in lines[1]


def test_runs_needs_a_ledger():
    assert main(["runs"]) == EXIT_VALIDATION


def test_ledger_stores_seed_beyond_signed_range(tmp_path, capsys):
    ledger = str(tmp_path / "runs.db")
    seed = str(2 ** 63)
    assert main(["synth", "--config", "scannet", "--views", "2", "--seed", seed,
                 "--out", str(tmp_path / "s"), "--ledger", ledger]) == EXIT_OK
    capsys.readouterr()
    assert main(["runs", "--ledger", ledger]) == EXIT_OK
    assert f"seed={seed}" in capsys.readouterr().out


def test_config_flag_skips_reading_scene_grid(tmp_path, synth_dir, monkeypatch):
    def unexpected(path):
        raise AssertionError(f"scene grid read from {path}")

    monkeypatch.setattr("src.cli.main.load_scene", unexpected)
    scene = str(synth_dir / "scene.json")
    assert main(["project", scene, "--config", "scannet", "--out", str(tmp_path / "v")]) == EXIT_OK
    assert main(["targets", scene, "--config", "scannet", "--out", str(tmp_path / "t")]) == EXIT_OK
