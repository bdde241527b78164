import json

import pytest

from src.core.errors import ParseError, ValidationError
from src.core.manifest import MANIFEST_NAME, RunManifest, load_manifest


def test_stage_records_timing_in_order():
    manifest = RunManifest("project", "kitti")
    with manifest.stage("project"):
        pass
    with manifest.stage("aggregate"):
        pass
    assert [t.stage for t in manifest.timings] == ["project", "aggregate"]
    assert all(t.ms >= 0 for t in manifest.timings)
    assert manifest.total_ms == pytest.approx(sum(t.ms for t in manifest.timings))


def test_stage_records_timing_on_failure():
    manifest = RunManifest("eval", "kitti")
    with pytest.raises(RuntimeError):
        with manifest.stage("match"):
            raise RuntimeError("boom")
    assert manifest.timings[0].stage == "match"


def test_write_and_load(tmp_path):
    manifest = RunManifest("synth", "scannet", inputs=["a.json"], seed=42, out_dir=str(tmp_path / "run"))
    with manifest.stage("synth"):
        pass
    path = manifest.write()
    assert path == tmp_path / "run" / MANIFEST_NAME
    loaded = load_manifest(tmp_path / "run")
    assert loaded.command == "synth"
    assert loaded.seed == 42
    assert loaded.inputs == ["a.json"]
    assert loaded.timings[0].stage == "synth"


def test_load_rejects_bad_json(tmp_path):
    path = tmp_path / MANIFEST_NAME
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_manifest(path)


def test_load_rejects_missing_command(tmp_path):
    path = tmp_path / MANIFEST_NAME
    path.write_text(json.dumps({"config": "kitti"}), encoding="utf-8")
    with pytest.raises(ParseError):
        load_manifest(path)


def test_rejects_empty_command():
    with pytest.raises(ValidationError):
        RunManifest("", "kitti")


def test_rejects_negative_seed():
    with pytest.raises(ValidationError):
        RunManifest("nms", "kitti", seed=-1)
