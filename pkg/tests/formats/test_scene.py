import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.errors import ParseError, ValidationError
from src.core.evaluation import Difficulty
from src.core.geometry import CameraIntrinsics, look_at
from src.core.stub_features import StubSpec
from src.formats.scene import (
    SceneFile,
    load_scene,
    parse_scene,
    save_scene,
    scene_to_dict,
    stub_view,
)

IDENTITY = {"rotation": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "translation": [0, 0, 0]}
INTRINSICS = {"fx": 100.0, "fy": 100.0, "cx": 64.0, "cy": 48.0}

SCENE = {
    "version": 1,
    "scene_id": "room-1",
    "grid": "scannet",
    "views": [
        {
            "name": "inline",
            "image": "frames/0001.png",
            "intrinsics": INTRINSICS,
            "extrinsics": IDENTITY,
            "features": {"width": 2, "height": 1, "channels": 2, "stride": 4, "data": [0, 1, 2, 3]},
        },
        {
            "intrinsics": INTRINSICS,
            "extrinsics": IDENTITY,
            "stub": {"width": 32, "height": 24, "stride": 4, "seed": 7, "channels": 3},
        },
    ],
    "objects": [
        {"box": [1, 2, 0.5, 0.8, 1.0, 1.2, 0.0], "class_id": 2},
        {"box": [3, 0, 0.5, 0.8, 1.0, 1.2, 0.1], "class_id": 4, "difficulty": "hard", "ignore": True},
    ],
    "layout": [0, 0, 1.4, 6.0, 2.8, 8.0, 0.0],
    "pose": {"beta": -0.1, "gamma": 0.02},
}


def scene_text(doc=None):
    return json.dumps(SCENE if doc is None else doc)


def broken(path_and_value):
    doc = copy.deepcopy(SCENE)
    *parents, last = path_and_value[0]
    target = doc
    for key in parents:
        target = target[key]
    if path_and_value[1] is KeyError:
        del target[last]
    else:
        target[last] = path_and_value[1]
    return doc


class TestParse:
    def test_reads_everything(self):
        scene = parse_scene(scene_text())
        assert scene.scene_id == "room-1"
        assert scene.grid == "scannet"
        assert len(scene.views) == 2
        assert scene.views[0].image == "frames/0001.png"
        assert scene.views[0].view.features.data[0, 1].tolist() == [2.0, 3.0]
        assert scene.views[1].view.features.data.shape == (24, 32, 3)
        assert [o.class_id for o in scene.objects] == [2, 4]
        assert scene.objects[1].difficulty is Difficulty.HARD
        assert scene.objects[1].ignore
        assert scene.layout.w == 6.0
        assert scene.pose.beta == -0.1

    def test_stub_views_are_deterministic(self):
        a = parse_scene(scene_text()).views[1].view.features.data
        b = parse_scene(scene_text()).views[1].view.features.data
        assert a.tobytes() == b.tobytes()
        assert a[5, 7, 0] == 7.0

    def test_optional_fields(self):
        doc = {"version": 1, "views": [SCENE["views"][1]]}
        scene = parse_scene(json.dumps(doc))
        assert scene.objects == []
        assert scene.layout is None
        assert scene.pose is None

    def test_json_syntax_error_has_line(self):
        with pytest.raises(ParseError) as err:
            parse_scene('{\n  "version": 1,\n  "views": [\n}')
        assert err.value.line == 4

    @pytest.mark.parametrize("change, field", [
        ((("version",), 2), "version"),
        ((("views",), []), "views"),
        ((("views", 0, "intrinsics", "fx"), "100"), "views[0].intrinsics.fx"),
        ((("views", 0, "intrinsics", "fx"), -1.0), "views[0].intrinsics"),
        ((("views", 0, "extrinsics", "rotation"), [[1, 0, 0], [0, 1, 0]]), "views[0].extrinsics.rotation"),
        ((("views", 0, "extrinsics", "rotation"), [[2, 0, 0], [0, 1, 0], [0, 0, 1]]), "views[0].extrinsics"),
        ((("views", 0, "features", "data"), [0, 1, 2]), "views[0].features.data"),
        ((("views", 1, "stub", "pattern"), "plaid"), "views[1].stub"),
        ((("objects", 0, "box"), [1, 2, 3]), "objects[0].box"),
        ((("objects", 0, "box"), [0, 0, 0, -1, 1, 1, 0]), "objects[0].box"),
        ((("objects", 1, "difficulty"), "brutal"), "objects[1].difficulty"),
        ((("objects", 1, "ignore"), "yes"), "objects[1].ignore"),
        ((("pose", "gamma"), KeyError), "pose.gamma"),
        ((("views", 0, "intrinsics"), KeyError), "views[0].intrinsics"),
    ])
    def test_errors_name_the_field(self, change, field):
        with pytest.raises(ParseError) as err:
            parse_scene(scene_text(broken(change)))
        assert err.value.field == field

    def test_view_needs_exactly_one_feature_source(self):
        doc = copy.deepcopy(SCENE)
        doc["views"][0]["stub"] = doc["views"][1]["stub"]
        with pytest.raises(ParseError) as err:
            parse_scene(scene_text(doc))
        assert err.value.field == "views[0]"

    def test_top_level_must_be_object(self):
        with pytest.raises(ParseError):
            parse_scene("[1, 2, 3]")

    def test_scene_needs_a_view(self):
        with pytest.raises(ValidationError):
            SceneFile(views=[])

    @given(st.recursive(
        st.none() | st.booleans() | st.floats(allow_nan=False) | st.integers() | st.text(max_size=5),
        lambda children: st.lists(children, max_size=4) | st.dictionaries(
            st.sampled_from(["version", "views", "objects", "box", "intrinsics", "stub", "width"]), children,
            max_size=4),
        max_leaves=20,
    ))
    @settings(max_examples=300)
    def test_fuzzed_documents_only_raise_parse_error(self, doc):
        try:
            parse_scene(json.dumps(doc))
        except ParseError:
            pass


class TestWrite:
    def test_save_and_load(self, tmp_path):
        scene = parse_scene(scene_text())
        path = save_scene(scene, tmp_path / "nested" / "scene.json")
        again = load_scene(path)
        assert scene_to_dict(again) == scene_to_dict(scene)

    def test_stub_is_written_back_compactly(self):
        doc = scene_to_dict(parse_scene(scene_text()))
        assert "stub" in doc["views"][1]
        assert "features" not in doc["views"][1]
        assert doc["views"][0]["features"]["data"] == [0.0, 1.0, 2.0, 3.0]

    def test_stub_view_dimensions(self):
        view = stub_view(
            CameraIntrinsics(520.0, 520.0, 320.0, 240.0), look_at((0, 0, 1), (3, 0, 1)),
            (640, 480), StubSpec(seed=3, channels=8), stride=4, name="cam",
        )
        assert view.stub["width"] == 160
        assert view.stub["height"] == 120
        assert view.view.features.data.shape == (120, 160, 8)
        np.testing.assert_array_equal(view.view.features.data[0, :, 0], np.arange(160))
