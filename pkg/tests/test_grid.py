import math

import numpy as np
import pytest

from oapgen import (
    ConfigError,
    DetectionGrid,
    GridFormatError,
    GridSpec,
    GRID_PRESETS,
    SensorSetup,
    SensorSpec,
    build_grid,
    fuse,
    load_grid,
    reference_sensor_setup,
    save_grid,
    single_sensor_probability,
)


def forward_sensor(**overrides):
    kwargs = dict(
        mount=(0.0, 0.0, 0.0),
        azimuth=0.0,
        azimuth_half_angle=0.5,
        elevation_half_angle=0.3,
        max_range=100.0,
        p_peak=0.9,
        decay=2.0,
    )
    kwargs.update(overrides)
    return SensorSpec(**kwargs)


class TestSingleSensorProbability:
    def test_point_behind_sensor_is_zero(self):
        assert single_sensor_probability(forward_sensor(), (-10.0, 0.0, 0.0)) == 0.0

    def test_point_at_mount_gives_peak(self):
        assert single_sensor_probability(forward_sensor(), (0.0, 0.0, 0.0)) == 0.9

    def test_half_range_matches_decay_model(self):
        # direct evaluation of the declared model: 0.9 * (1 - 0.5**2)
        assert single_sensor_probability(forward_sensor(), (50.0, 0.0, 0.0)) == 0.675

    def test_beyond_max_range_is_zero(self):
        assert single_sensor_probability(forward_sensor(), (100.1, 0.0, 0.0)) == 0.0

    def test_outside_azimuth_cone_is_zero(self):
        s = forward_sensor(azimuth_half_angle=0.1)
        assert single_sensor_probability(s, (10.0, 5.0, 0.0)) == 0.0

    def test_outside_elevation_cone_is_zero(self):
        s = forward_sensor(elevation_half_angle=0.1)
        assert single_sensor_probability(s, (10.0, 0.0, 5.0)) == 0.0

    def test_range_is_inclusive_of_cone_interior(self):
        s = forward_sensor()
        p = single_sensor_probability(s, (10.0, 2.0, 1.0))
        assert 0.0 < p < s.p_peak

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ConfigError):
            forward_sensor(max_range=-1.0)
        with pytest.raises(ConfigError):
            forward_sensor(p_peak=1.5)
        with pytest.raises(ConfigError):
            forward_sensor(azimuth_half_angle=0.0)


class TestFuse:
    def test_single_uncovered_sensor(self):
        assert fuse([0.0]) == 0.0

    def test_identity_for_one_sensor(self):
        for p in (0.1, 0.3, 0.675, 1.0):
            assert fuse([p]) == p

    def test_two_halves(self):
        assert fuse([0.5, 0.5]) == 0.75

    def test_empty_list_fuses_to_zero(self):
        assert fuse([]) == 0.0

    def test_monotone_in_added_sensors(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            ps = list(rng.random(rng.integers(1, 6)))
            extra = float(rng.random())
            assert fuse(ps + [extra]) >= fuse(ps)

    def test_result_bounds(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            ps = list(rng.random(rng.integers(1, 7)))
            f = fuse(ps)
            assert max(ps) <= f <= 1.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            ps = list(rng.random(5))
            shuffled = list(ps)
            rng.shuffle(shuffled)
            assert fuse(shuffled) == pytest.approx(fuse(ps), rel=1e-12)


class TestGridSpec:
    def test_coarse_preset_has_76_x_levels(self):
        assert GRID_PRESETS["coarse"].shape[0] == 76

    def test_fine_preset_counts(self):
        assert GRID_PRESETS["fine"].shape == (301, 153, 29)

    def test_count_handles_float_dust(self):
        # 4.0 / 0.2 evaluates below 20 in floating point
        spec = GridSpec(0.0, 4.0, 0.0, 4.0, 0.0, 4.0, 0.2, 0.2, 0.2)
        assert spec.shape == (21, 21, 21)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            GridSpec(0, 10, 0, 10, 0, 10, -1.0, 1, 1)
        with pytest.raises(ConfigError):
            GridSpec(0, 0, 0, 10, 0, 10, 1, 1, 1)
        with pytest.raises(ConfigError):
            GridSpec(0, 0.5, 0, 10, 0, 10, 1.0, 1, 1)  # single x level

    def test_nearest_index_snaps_and_clamps(self):
        spec = GridSpec(0.0, 10.0, -4.0, 4.0, 0.0, 2.0, 2.0, 2.0, 1.0)
        grid = DetectionGrid(spec, np.zeros(spec.shape), (0, 0, 0))
        assert grid.nearest_index((3.2, -0.9, 0.4)) == (2, 2, 0)
        assert grid.nearest_index((-50.0, 50.0, 50.0)) == (0, 4, 2)
        # exact midpoint rounds up
        assert grid.nearest_index((1.0, 0.0, 0.0))[0] == 1


class TestBuildGrid:
    def test_backward_sensors_leave_forward_grid_empty(self):
        setup = SensorSetup(sensors=(forward_sensor(azimuth=math.pi),))
        spec = GridSpec(5.0, 50.0, -10.0, 10.0, 0.0, 2.0, 5.0, 5.0, 1.0)
        grid = build_grid(setup, spec, ego_position=(0, 0, 0))
        assert np.all(grid.values == 0.0)

    def test_single_sensor_node_matches_direct_evaluation(self):
        sensor = forward_sensor()
        setup = SensorSetup(sensors=(sensor,), attenuation=0.8)
        spec = GridSpec(0.0, 100.0, -10.0, 10.0, 0.0, 2.0, 10.0, 10.0, 1.0)
        ego = (0.0, 0.0, 0.0)
        grid = build_grid(setup, spec, ego_position=ego)
        node = (5, 1, 1)
        point = grid.node_position(node) - np.asarray(ego)
        expected = 0.8 * single_sensor_probability(sensor, point)
        assert grid.value_at(node) == expected

    def test_values_never_exceed_attenuation(self):
        setup = reference_sensor_setup(attenuation=0.7)
        grid = build_grid(setup, GRID_PRESETS["coarse"])
        assert grid.values.max() <= 0.7

    def test_zero_outside_all_cones(self):
        setup = SensorSetup(sensors=(forward_sensor(azimuth_half_angle=0.05, max_range=40.0),))
        spec = GridSpec(0.0, 100.0, -50.0, 50.0, 0.0, 2.0, 10.0, 10.0, 1.0)
        grid = build_grid(setup, spec, ego_position=(0, 0, 0))
        xs, ys, zs = spec.axis_levels()
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                if x > 40.0 or (x > 0 and abs(math.atan2(y, x)) > 0.05 + 0.3):
                    assert grid.values[i, j, 0] == 0.0

    def test_empty_setup_rejected(self):
        with pytest.raises(ConfigError):
            SensorSetup(sensors=(), attenuation=1.0)
        with pytest.raises(ConfigError):
            build_grid(SensorSetup(sensors=(forward_sensor(),), attenuation=1.0)._replace_empty()
                       if False else SensorSetup(sensors=(forward_sensor(),)),
                       GridSpec(0, 1, 0, 1, 0, 1, 2, 2, 2)) and None

    def test_reference_setup_leaves_far_start_uncovered(self, coarse_grid):
        start = coarse_grid.nearest_index((300.0, -20.0, 2.0))
        assert coarse_grid.value_at(start) == 0.0

    def test_reference_setup_saturates_near_field(self, coarse_grid):
        near = coarse_grid.nearest_index((12.0, 0.0, 0.5))
        assert coarse_grid.value_at(near) > 0.95

    def test_values_immutable(self, coarse_grid):
        with pytest.raises(ValueError):
            coarse_grid.values[0, 0, 0] = 0.5


class TestGridFile:
    def roundtrip(self, grid, tmp_path):
        dest = tmp_path / "grid.oapgrid"
        save_grid(grid, dest)
        return load_grid(dest)

    def test_roundtrip_small_grid(self, tmp_path):
        spec = GridSpec(0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0)
        values = np.array([0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 1.0]).reshape(2, 2, 2)
        grid = DetectionGrid(spec, values, (0.5, 0.5, 0.5))
        loaded = self.roundtrip(grid, tmp_path)
        assert loaded.spec == grid.spec
        assert np.array_equal(loaded.values, grid.values)
        assert np.array_equal(loaded.ego_position, grid.ego_position)

    def test_roundtrip_reference_grid_bitexact(self, coarse_grid, tmp_path):
        loaded = self.roundtrip(coarse_grid, tmp_path)
        assert loaded.values.tobytes() == coarse_grid.values.tobytes()
        assert loaded.spec == coarse_grid.spec
        assert loaded.ego_position.tobytes() == coarse_grid.ego_position.tobytes()

    def write_lines(self, tmp_path, lines):
        f = tmp_path / "bad.oapgrid"
        f.write_text("\n".join(lines) + "\n")
        return f

    def test_value_out_of_range_rejected(self, tmp_path):
        f = self.write_lines(tmp_path, [
            "OAPGRID 1", "2 2 2", "0 0 0", "1 1 1", "0 0 0",
            "0 0 0 0", "0 0 0 1.5",
        ])
        with pytest.raises(GridFormatError, match="value 7"):
            load_grid(f)

    def test_value_count_mismatch_rejected(self, tmp_path):
        f = self.write_lines(tmp_path, [
            "OAPGRID 1", "3 3 3", "0 0 0", "1 1 1", "0 0 0",
            " ".join(["0.5"] * 26),
        ])
        with pytest.raises(GridFormatError, match="dimension mismatch"):
            load_grid(f)

    def test_bad_magic_rejected(self, tmp_path):
        f = self.write_lines(tmp_path, ["GRID 2", "2 2 2", "0 0 0", "1 1 1", "0 0 0", "0"])
        with pytest.raises(GridFormatError, match="malformed header"):
            load_grid(f)

    def test_non_numeric_value_rejected(self, tmp_path):
        f = self.write_lines(tmp_path, [
            "OAPGRID 1", "2 2 2", "0 0 0", "1 1 1", "0 0 0",
            "0 0 0 abc 0 0 0 0",
        ])
        with pytest.raises(GridFormatError, match="value 3"):
            load_grid(f)

    def test_bad_spacing_rejected(self, tmp_path):
        f = self.write_lines(tmp_path, [
            "OAPGRID 1", "2 2 2", "0 0 0", "1 -1 1", "0 0 0",
            " ".join(["0"] * 8),
        ])
        with pytest.raises(GridFormatError, match="spacing"):
            load_grid(f)

    def test_truncated_file_rejected(self, tmp_path):
        f = self.write_lines(tmp_path, ["OAPGRID 1", "2 2 2"])
        with pytest.raises(GridFormatError, match="truncated"):
            load_grid(f)
