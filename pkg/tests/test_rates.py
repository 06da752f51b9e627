import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evsr.events import ON, OFF, EventStream
from evsr.rates import (
    Kernel,
    RateField,
    RateFunction,
    build_psth,
    build_rate_field,
    default_kernel,
    field_to_csv,
    hr_rate_function,
    nearest_neighbor_kernel,
    smooth_rate_field,
)


class TestBuildPsth:
    def test_two_even_bins(self):
        rf = build_psth([25, 75], 100, 50)
        np.testing.assert_array_equal(rf.values, [1.0, 1.0])

    def test_normalized_by_max(self):
        rf = build_psth([10, 20, 80], 100, 50)
        np.testing.assert_array_equal(rf.values, [1.0, 0.5])

    def test_silent_pixel_all_zero(self):
        rf = build_psth([], 100, 50)
        np.testing.assert_array_equal(rf.values, [0.0, 0.0])

    def test_bin_boundaries_right_closed(self):
        # t = 50 belongs to bin 0 for bins (0,50], (50,100].
        rf = build_psth([50, 51], 100, 50)
        np.testing.assert_array_equal(rf.values, [1.0, 1.0])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            build_psth([150], 100, 50)

    def test_horizon_must_divide(self):
        with pytest.raises(ValueError):
            build_psth([10], 110, 50)

    @given(st.lists(st.integers(1, 1000), max_size=80), st.integers(1, 50))
    @settings(max_examples=60, deadline=None)
    def test_values_in_unit_range(self, times, bins):
        rf = build_psth(times, 1000, 1000 // bins if 1000 % bins == 0 else 10)
        assert rf.values.min() >= 0
        assert rf.values.max() <= 1.0
        if times:
            assert rf.values.max() == 1.0


class TestKernel:
    def test_default_matches_reference_filter(self):
        k = default_kernel()
        assert k.weights[1, 1] == 12 / 16
        assert k.weights[0, 0] == 0.0
        assert k.weights[0, 1] == 1 / 16
        assert k.weights.sum() == pytest.approx(1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            Kernel(np.ones((3, 3)))
        with pytest.raises(ValueError):
            Kernel(np.array([[0, 0, 0], [0, 2, 0], [0, 0, -1]]) / 1.0)


def field_from_array(arr, bin_width=50):
    arr = np.asarray(arr, dtype=float)
    return RateField(arr.shape[1], arr.shape[0], bin_width, arr)


class TestHrRateFunction:
    def test_uniform_field_unchanged(self):
        vals = np.tile(np.array([0.2, 1.0, 0.5]), (4, 4, 1))
        f = field_from_array(vals)
        out = hr_rate_function(f, 5, 2, 2, default_kernel())
        np.testing.assert_allclose(out.values, [0.2, 1.0, 0.5])

    def test_all_zero_field(self):
        f = field_from_array(np.zeros((3, 3, 4)))
        out = hr_rate_function(f, 0, 0, 2, default_kernel())
        assert not out.values.any()

    def test_isolated_center_weight(self):
        vals = np.zeros((5, 5, 2))
        vals[2, 2, 0] = 1.0
        f = field_from_array(vals)
        out = hr_rate_function(f, 2, 2, 1, default_kernel())
        assert out.values[0] == pytest.approx(12 / 16)

    def test_alpha1_nearest_neighbor_identity(self):
        rng = np.random.default_rng(0)
        vals = rng.random((4, 6, 3))
        f = field_from_array(vals)
        for y in range(4):
            for x in range(6):
                out = hr_rate_function(f, x, y, 1, nearest_neighbor_kernel())
                np.testing.assert_array_equal(out.values, vals[y, x])

    def test_bounded_by_neighborhood_max(self):
        rng = np.random.default_rng(1)
        vals = rng.random((6, 6, 5))
        f = field_from_array(vals)
        k = default_kernel()
        for hx, hy in [(0, 0), (5, 7), (11, 11), (4, 9)]:
            out = hr_rate_function(f, hx, hy, 2, k)
            x, y = hx // 2, hy // 2
            neigh = vals[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2]
            assert (out.values <= neigh.max(axis=(0, 1)) + 1e-12).all()

    def test_out_of_range(self):
        f = field_from_array(np.zeros((3, 3, 1)))
        with pytest.raises(ValueError):
            hr_rate_function(f, 6, 0, 2, default_kernel())

    def test_unit_sum_kernel_keeps_range(self):
        rng = np.random.default_rng(2)
        vals = rng.random((5, 5, 4))
        f = field_from_array(vals)
        k = Kernel(np.full((3, 3), 1 / 9))
        out = hr_rate_function(f, 3, 3, 2, k)
        assert out.values.max() <= vals.max() + 1e-12


class TestBuildRateField:
    def test_empty_stream_all_zero(self):
        s = EventStream.empty(4, 4, 200)
        f = build_rate_field(s, ON, 50)
        assert not f.values.any()
        assert f.n_bins == 4

    def test_single_active_pixel(self):
        s = EventStream.from_events(4, 4, 200, [(10, 1, 2, ON), (60, 1, 2, ON)])
        f = build_rate_field(s, ON, 50)
        active = np.argwhere(f.values.any(axis=2))
        np.testing.assert_array_equal(active, [[2, 1]])

    def test_bin_count_padded_up(self):
        s = EventStream.empty(4, 4, 130)
        assert build_rate_field(s, ON, 50).n_bins == 3

    def test_polarity_filtered(self):
        s = EventStream.from_events(2, 2, 100, [(10, 0, 0, ON), (20, 1, 1, OFF)])
        f = build_rate_field(s, OFF, 50)
        assert f.values[1, 1].any()
        assert not f.values[0, 0].any()


class TestSmoothRateField:
    def test_matches_per_pixel_path(self):
        rng = np.random.default_rng(3)
        vals = rng.random((5, 7, 6))
        f = field_from_array(vals)
        k = default_kernel()
        smoothed = smooth_rate_field(f, k)
        factor = 3
        for hy in range(factor * f.height):
            for hx in range(factor * f.width):
                expected = hr_rate_function(f, hx, hy, factor, k)
                np.testing.assert_allclose(
                    smoothed.values[hy // factor, hx // factor], expected.values)

    def test_csv_dump_shape(self):
        f = field_from_array(np.zeros((2, 2, 3)))
        lines = field_to_csv(f).strip().split("\n")
        assert len(lines) == 4
        assert lines[0].startswith("0,0,")
