import numpy as np
import pytest

from src.core.errors import ValidationError
from src.core.stub_features import (
    StubSpec,
    check_multiscale_shapes,
    feature_dims,
    make_features,
    splitmix64,
    uniform_floats,
)
from src.core.voxelgrid import VoxelGridSpec


def test_splitmix64_reference_values():
    values = splitmix64(0, 2)
    assert int(values[0]) == 0xE220A8397B1DCDAF
    assert int(values[1]) == 0x6E789E6AA1B965F4


def test_uniform_floats_range():
    values = uniform_floats(123, 10000)
    assert values.min() >= 0.0
    assert values.max() < 1.0
    assert abs(values.mean() - 0.5) < 0.02


def test_same_seed_same_map():
    a = make_features(StubSpec(seed=9, channels=8, pattern="seeded-random"), 20, 10)
    b = make_features(StubSpec(seed=9, channels=8, pattern="seeded-random"), 20, 10)
    assert a.data.tobytes() == b.data.tobytes()


def test_different_seed_different_map():
    a = make_features(StubSpec(seed=1, channels=4, pattern="seeded-random"), 8, 8)
    b = make_features(StubSpec(seed=2, channels=4, pattern="seeded-random"), 8, 8)
    assert not np.array_equal(a.data, b.data)


def test_coordinate_encoding_channels():
    fm = make_features(StubSpec(seed=0, channels=5), 7, 3, stride=8)
    assert fm.data.shape == (3, 7, 5)
    assert fm.stride == 8
    for v in range(3):
        for u in range(7):
            assert fm.data[v, u, 0] == u
            assert fm.data[v, u, 1] == v


def test_coordinate_encoding_single_channel():
    fm = make_features(StubSpec(seed=0, channels=1), 4, 2)
    assert fm.data[:, :, 0].tolist() == [[0, 1, 2, 3], [0, 1, 2, 3]]


def test_one_hot_pattern():
    fm = make_features(StubSpec(seed=0, channels=6, pattern="one-hot"), 2, 2)
    flat = fm.data.reshape(4, 6)
    for c in range(6):
        assert flat[:, c].sum() == 1.0
        assert flat[c % 4, c] == 1.0


@pytest.mark.parametrize("kwargs", [{"channels": 0}, {"pattern": "noise"}, {"seed": -1}, {"seed": 2 ** 64}])
def test_stub_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        StubSpec(**kwargs)


def test_rejects_empty_map():
    with pytest.raises(ValidationError):
        make_features(StubSpec(), 0, 4)


def test_feature_dims():
    assert feature_dims(1248, 384, 4) == (312, 96)
    assert feature_dims(641, 479, 4) == (160, 119)
    with pytest.raises(ValidationError):
        feature_dims(3, 3, 4)


def test_multiscale_shapes_for_indoor_grid():
    spec = VoxelGridSpec.from_limits((-3.2, 3.2, 0.0, 6.4, -2.28, 0.28), 0.16)
    assert check_multiscale_shapes(spec, 256) == [(10, 10, 4, 256), (20, 20, 8, 256), (40, 40, 16, 256)]


def test_multiscale_shapes_reject_indivisible_grid():
    spec = VoxelGridSpec.from_limits((0.0, 0.96, 0.0, 1.28, 0.0, 0.64), 0.16)
    with pytest.raises(ValidationError):
        check_multiscale_shapes(spec, 64)
    with pytest.raises(ValidationError):
        check_multiscale_shapes(VoxelGridSpec.from_limits((0, 1.28, 0, 1.28, 0, 0.64), 0.16), 0)
