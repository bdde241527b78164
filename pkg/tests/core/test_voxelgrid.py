import itertools
import math

import numpy as np
import pytest

from src.core.errors import ParseError, ValidationError
from src.core.geometry import CameraExtrinsics, CameraIntrinsics, look_at, project_point
from src.core.stub_features import StubSpec, make_features
from src.core.voxelgrid import (
    CameraView,
    FeatureMap2D,
    VoxelGridSpec,
    VoxelVolume,
    aggregate,
    coverage_bev,
    decode_volume,
    derive_counts,
    encode_volume,
    load_volume,
    project_view,
    project_views,
    sample_views,
    save_volume,
    voxel_center,
    voxel_centers,
)

SMALL_GRID = VoxelGridSpec.from_limits((0.0, 3.2, -1.6, 1.6, -0.8, 0.8), 0.16)


def random_view(rng, spec=SMALL_GRID, pattern="coordinate-encoding", channels=4):
    center = np.array([(spec.x_min + spec.x_max) / 2, (spec.y_min + spec.y_max) / 2, 0.0])
    yaw = rng.uniform(-math.pi, math.pi)
    radius = rng.uniform(2.5, 5.0)
    eye = center + np.array([radius * math.cos(yaw), radius * math.sin(yaw), rng.uniform(0.2, 1.5)])
    target = center + rng.normal(scale=0.3, size=3)
    k = CameraIntrinsics(rng.uniform(80, 160), rng.uniform(80, 160), 64.0, 48.0)
    features = make_features(StubSpec(int(rng.integers(0, 2 ** 32)), channels, pattern), 32, 24, stride=4)
    return CameraView(k, look_at(eye, target), features)


def brute_force_mask(view, spec):
    mask = np.zeros(spec.shape, dtype=np.uint32)
    for ix, iy, iz in itertools.product(range(spec.nx), range(spec.ny), range(spec.nz)):
        u, v, depth = project_point(view.intrinsics, view.extrinsics, voxel_center(spec, ix, iy, iz),
                                    view.features.stride)
        if depth > 0 and 0 <= math.floor(u) < view.features.width and 0 <= math.floor(v) < view.features.height:
            mask[ix, iy, iz] = 1
    return mask


class TestGridSpec:
    @pytest.mark.parametrize("limits, s, counts", [
        ((-39.68, 39.68, 0.0, 69.12, -2.92, 0.92), 0.32, (248, 216, 12)),
        ((-49.92, 49.92, -49.92, 49.92, -2.92, 0.92), 0.32, (312, 312, 12)),
        ((-3.2, 3.2, 0.0, 6.4, -2.28, 0.28), 0.16, (40, 40, 16)),
        ((-3.2, 3.2, -3.2, 3.2, -1.28, 1.28), 0.16, (40, 40, 16)),
    ])
    def test_preset_counts(self, limits, s, counts):
        assert derive_counts(limits, s) == counts
        spec = VoxelGridSpec.from_limits(limits, s)
        for n, lo, hi in zip(spec.shape, limits[0::2], limits[1::2]):
            assert abs(n * s - (hi - lo)) <= 1e-9

    def test_rejects_non_multiple(self):
        with pytest.raises(ValidationError):
            derive_counts((0.0, 1.0, 0.0, 1.0, 0.0, 1.0), 0.3)

    def test_rejects_unordered_limits(self):
        with pytest.raises(ValidationError):
            derive_counts((1.0, 0.0, 0.0, 1.0, 0.0, 1.0), 0.5)

    def test_rejects_zero_voxel_size(self):
        with pytest.raises(ValidationError):
            derive_counts((0.0, 1.0, 0.0, 1.0, 0.0, 1.0), 0.0)

    def test_voxel_center(self):
        spec = VoxelGridSpec.from_limits((0, 1, 0, 1, 0, 1), 1.0)
        assert voxel_center(spec, 0, 0, 0) == (0.5, 0.5, 0.5)

    def test_voxel_center_out_of_bounds(self):
        with pytest.raises(ValidationError):
            voxel_center(SMALL_GRID, SMALL_GRID.nx, 0, 0)

    def test_voxel_centers_match_scalar(self):
        xs, ys, zs = voxel_centers(SMALL_GRID)
        for ix, iy, iz in [(0, 0, 0), (3, 7, 2), (19, 19, 9)]:
            assert (xs[ix, iy, iz], ys[ix, iy, iz], zs[ix, iy, iz]) == voxel_center(SMALL_GRID, ix, iy, iz)


class TestProjection:
    def test_mask_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            view = random_view(rng)
            volume = project_view(view, SMALL_GRID)
            np.testing.assert_array_equal(volume.mask, brute_force_mask(view, SMALL_GRID))

    def test_coordinate_encoding_self_test(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            view = random_view(rng)
            volume = project_view(view, SMALL_GRID)
            assert volume.covered_voxels > 0
            for ix, iy, iz in zip(*np.nonzero(volume.mask)):
                u, v, _ = project_point(view.intrinsics, view.extrinsics, voxel_center(SMALL_GRID, ix, iy, iz), 4)
                assert volume.data[ix, iy, iz, 0] == math.floor(u)
                assert volume.data[ix, iy, iz, 1] == math.floor(v)

    def test_invisible_voxels_are_zero(self):
        volume = project_view(random_view(np.random.default_rng(2)), SMALL_GRID)
        assert np.all(volume.data[volume.mask == 0] == 0)

    def test_camera_facing_away_sees_nothing(self):
        features = make_features(StubSpec(0, 2), 8, 8, stride=1)
        view = CameraView(CameraIntrinsics(4, 4, 4, 4), look_at((-1.0, 0.0, 0.0), (-5.0, 0.0, 0.0)), features)
        assert project_view(view, SMALL_GRID).covered_voxels == 0

    def test_bilinear_keeps_mask(self):
        view = random_view(np.random.default_rng(3), pattern="seeded-random")
        nearest = project_view(view, SMALL_GRID, "nearest")
        bilinear = project_view(view, SMALL_GRID, "bilinear")
        np.testing.assert_array_equal(nearest.mask, bilinear.mask)

    def test_bilinear_at_cell_center_equals_nearest(self):
        # a single voxel whose center projects to the center of cell (2, 1)
        spec = VoxelGridSpec.from_limits((-0.5, 0.5, -0.5, 0.5, 1.5, 2.5), 1.0)
        data = np.arange(4 * 3 * 2, dtype=np.float32).reshape(3, 4, 2)
        k = CameraIntrinsics(1.0, 1.0, 2.5, 1.5)
        view = CameraView(k, CameraExtrinsics.identity(), FeatureMap2D(data, stride=1))
        nearest = project_view(view, spec, "nearest")
        bilinear = project_view(view, spec, "bilinear")
        np.testing.assert_allclose(bilinear.data[0, 0, 0], data[1, 2])
        np.testing.assert_array_equal(nearest.data[0, 0, 0], data[1, 2])

    def test_unknown_sampling(self):
        with pytest.raises(ValidationError):
            project_view(random_view(np.random.default_rng(4)), SMALL_GRID, "cubic")

    def test_threaded_projection_preserves_order(self):
        rng = np.random.default_rng(5)
        views = [random_view(rng) for _ in range(6)]
        serial = project_views(views, SMALL_GRID)
        threaded = project_views(views, SMALL_GRID, workers=4)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.mask, b.mask)
            np.testing.assert_array_equal(a.data, b.data)


class TestAggregate:
    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            per_view = project_views([random_view(rng, pattern="seeded-random") for _ in range(4)], SMALL_GRID)
            reference = aggregate(per_view)
            for _ in range(5):
                order = rng.permutation(len(per_view))
                shuffled = aggregate([per_view[i] for i in order])
                assert shuffled.data.tobytes() == reference.data.tobytes()
                assert shuffled.mask.tobytes() == reference.mask.tobytes()

    def test_mean_matches_scalar_reference(self):
        rng = np.random.default_rng(7)
        per_view = project_views([random_view(rng, pattern="seeded-random") for _ in range(3)], SMALL_GRID)
        volume = aggregate(per_view)
        for ix, iy, iz in [(10, 10, 5), (5, 3, 2), (15, 12, 7), (0, 0, 0)]:
            seen = [p.data[ix, iy, iz] for p in per_view if p.mask[ix, iy, iz]]
            expected = np.mean(seen, axis=0) if seen else np.zeros(per_view[0].channels)
            np.testing.assert_allclose(volume.data[ix, iy, iz], expected, atol=1e-6)
            assert volume.mask[ix, iy, iz] == len(seen)

    def test_unseen_voxels_are_exactly_zero(self):
        rng = np.random.default_rng(8)
        volume = aggregate(project_views([random_view(rng) for _ in range(2)], SMALL_GRID))
        assert np.all(volume.data[volume.mask == 0] == 0.0)

    def test_single_view_is_unchanged(self):
        single = project_view(random_view(np.random.default_rng(9)), SMALL_GRID)
        np.testing.assert_array_equal(aggregate([single]).data, single.data)

    def test_rejects_empty_input(self):
        with pytest.raises(ValidationError):
            aggregate([])

    def test_rejects_channel_mismatch(self):
        rng = np.random.default_rng(10)
        a = project_view(random_view(rng, channels=4), SMALL_GRID)
        b = project_view(random_view(rng, channels=3), SMALL_GRID)
        with pytest.raises(ValidationError):
            aggregate([a, b])

    def test_coverage_bev(self):
        rng = np.random.default_rng(11)
        volume = aggregate(project_views([random_view(rng) for _ in range(3)], SMALL_GRID))
        cov = coverage_bev(volume)
        assert cov.shape == (SMALL_GRID.nx, SMALL_GRID.ny)
        assert cov.max() <= 3


class TestSampleViews:
    def test_none_returns_all(self):
        views = [random_view(np.random.default_rng(i)) for i in range(3)]
        assert sample_views(views, None, 0) == views

    def test_sampling_is_seeded_and_ordered(self):
        views = [random_view(np.random.default_rng(i)) for i in range(6)]
        first = sample_views(views, 3, seed=42)
        assert first == sample_views(views, 3, seed=42)
        positions = [views.index(v) for v in first]
        assert positions == sorted(positions)

    @pytest.mark.parametrize("n", [0, 4])
    def test_rejects_impossible_count(self, n):
        views = [random_view(np.random.default_rng(i)) for i in range(3)]
        with pytest.raises(ValidationError):
            sample_views(views, n, 0)


class TestVolumeContainer:
    def test_file_round_trip(self, tmp_path):
        volume = aggregate(project_views([random_view(np.random.default_rng(12))], SMALL_GRID))
        path = save_volume(volume, tmp_path / "out" / "v.vxvl")
        loaded = load_volume(path)
        assert loaded.spec == volume.spec
        assert loaded.data.tobytes() == volume.data.tobytes()
        assert loaded.mask.tobytes() == volume.mask.tobytes()

    def test_bad_magic(self):
        payload = bytearray(encode_volume(VoxelVolume(SMALL_GRID, np.zeros(SMALL_GRID.shape + (1,)))))
        payload[:4] = b"XXXX"
        with pytest.raises(ParseError):
            decode_volume(bytes(payload))

    def test_truncated_payload(self):
        payload = encode_volume(VoxelVolume(SMALL_GRID, np.zeros(SMALL_GRID.shape + (1,))))
        with pytest.raises(ParseError):
            decode_volume(payload[:-4])
        with pytest.raises(ParseError):
            decode_volume(payload[:10])

    def test_rejects_features_without_coverage(self):
        data = np.zeros(SMALL_GRID.shape + (1,))
        data[0, 0, 0, 0] = 1.0
        with pytest.raises(ValidationError):
            VoxelVolume(SMALL_GRID, data)


@pytest.mark.slow
def test_fifty_view_projection_is_fast():
    import time

    spec = VoxelGridSpec.from_limits((-3.2, 3.2, -3.2, 3.2, -1.28, 1.28), 0.16)
    rng = np.random.default_rng(13)
    views = [random_view(rng, spec=spec, channels=16) for _ in range(50)]
    start = time.perf_counter()
    aggregate(project_views(views, spec, workers=4))
    assert time.perf_counter() - start < 2.0
