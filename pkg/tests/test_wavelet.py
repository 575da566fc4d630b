import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import direct_cwt
from track_sentinel.wavelet import (
    IndexSeries,
    ScaleGrid,
    WaveletError,
    coefficient_sum,
    cwt,
    index_series,
    make_scale_grid,
    read_scalogram,
    wavelet_kernel,
    write_scalogram,
)

STEP = 0.15
GRID = make_scale_grid(STEP, (1.0, 3.0), 16)
N = 512

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
series = arrays(np.float64, N, elements=finite)


def dog1(u):
    return -u * np.exp(-0.5 * u**2) / math.sqrt(2 * math.pi)


class TestScaleGrid:
    def test_time_axis_band(self):
        g = make_scale_grid(1 / 500, (20.0, 200.0), 32)
        assert len(g) == 32
        f = g.pseudo_frequencies
        assert f.max() == pytest.approx(200.0, rel=0.01)
        assert f.min() == pytest.approx(20.0, rel=0.01)

    def test_doubling_preserves_ends(self):
        a = make_scale_grid(STEP, (1.0, 3.0), 24)
        b = make_scale_grid(STEP, (1.0, 3.0), 48)
        assert a.scales[0] == pytest.approx(b.scales[0])
        assert a.scales[-1] == pytest.approx(b.scales[-1])

    def test_log_spaced_increasing(self):
        r = GRID.scales[1:] / GRID.scales[:-1]
        assert np.all(r > 1)
        np.testing.assert_allclose(r, r[0])

    @pytest.mark.parametrize("n", [1, 7])
    def test_too_few_scales(self, n):
        with pytest.raises(WaveletError):
            make_scale_grid(STEP, (1.0, 3.0), n)

    def test_band_above_nyquist(self):
        with pytest.raises(WaveletError, match="Nyquist"):
            make_scale_grid(1 / 500, (20.0, 260.0), 32)

    def test_unsorted_scales(self):
        with pytest.raises(WaveletError):
            ScaleGrid(np.array([1.0, 0.5] * 5), STEP)


class TestKernel:
    @pytest.mark.parametrize("wavelet", ["dog1", "dog2", "dog3"])
    def test_zero_mean(self, wavelet):
        for a in GRID.scales:
            assert abs(wavelet_kernel(a, STEP, wavelet).sum()) < 1e-10

    def test_is_derivative_of_gaussian(self):
        a = GRID.scales[5]
        k = wavelet_kernel(a, STEP)
        h = (k.size - 1) // 2
        u = np.arange(-h, h + 1) * STEP / a
        np.testing.assert_allclose(k, dog1(u) * STEP / a, rtol=1e-12, atol=1e-15)


class TestCwt:
    def test_zero_series(self):
        assert np.all(cwt(np.zeros(N), GRID).coefficients == 0.0)

    def test_matches_direct_integral(self):
        x = np.random.default_rng(3).standard_normal(300)
        ref = direct_cwt(x, GRID.scales, STEP, dog1)
        got = cwt(x, GRID).coefficients
        assert np.max(np.abs(got - ref)) < 1e-10 * np.max(np.abs(ref))

    @pytest.mark.parametrize("f0", [0.8, 1.5, 2.4])
    def test_sinusoid_selects_nearest_scale(self, f0):
        # grid fine enough that even the smallest scale spans a few samples
        step = 0.05
        g = make_scale_grid(step, (0.5, 3.0), 24)
        s = cwt(np.sin(2 * np.pi * f0 * step * np.arange(4096)), g)
        # under L1 normalisation the gain at scale a is |psi_hat(2 pi a f0)|,
        # largest where the pseudo-frequency equals f0
        energy = np.array([np.mean(row[~m] ** 2) for row, m in zip(s.coefficients, s.mask)])
        assert np.argmax(energy) == np.argmin(np.abs(g.pseudo_frequencies - f0))

    def test_sinusoid_on_coarse_grid_shifts_down(self):
        # scales below the sample step are under-resolved; their effective
        # passband sits below the nominal pseudo-frequency
        g = make_scale_grid(STEP, (0.5, 3.0), 24)
        s = cwt(np.sin(2 * np.pi * 2.4 * STEP * np.arange(2048)), g)
        energy = np.array([np.mean(row[~m] ** 2) for row, m in zip(s.coefficients, s.mask)])
        assert g.pseudo_frequencies[np.argmax(energy)] < 2.4

    def test_step_localized_at_fine_scale(self):
        for p in (200, 333):
            x = np.zeros(N)
            x[p:] = 1.0
            fine = np.abs(cwt(x, GRID).coefficients[0])
            assert abs(int(np.argmax(fine)) - p) <= 2

    def test_fft_and_direct_agree(self):
        x = np.random.default_rng(4).standard_normal(4096)
        a = cwt(x, GRID, method="fft").coefficients
        b = cwt(x, GRID, method="direct").coefficients
        assert np.max(np.abs(a - b)) < 1e-8 * np.max(np.abs(b))

    def test_mask_marks_edges(self):
        s = cwt(np.ones(N), GRID)
        assert s.mask[:, 0].all() and s.mask[:, -1].all()
        assert not s.mask[:, N // 2].any()
        # coarser scales reach further into the padding
        assert np.all(np.diff(s.mask.sum(axis=1)) >= 0)

    def test_too_short(self):
        with pytest.raises(WaveletError, match="shorter"):
            cwt(np.ones(40), GRID)

    def test_unknown_method(self):
        with pytest.raises(WaveletError):
            cwt(np.ones(N), GRID, method="wavelet-packets")

    @settings(max_examples=40, deadline=None)
    @given(series, series, st.floats(-5, 5), st.floats(-5, 5))
    def test_linearity(self, x, y, alpha, beta):
        lhs = cwt(alpha * x + beta * y, GRID).coefficients
        rhs = alpha * cwt(x, GRID).coefficients + beta * cwt(y, GRID).coefficients
        scale = max(1.0, np.max(np.abs(lhs)), np.max(np.abs(rhs)))
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * scale

    @settings(max_examples=40, deadline=None)
    @given(series, st.integers(1, 60))
    def test_shift_equivariance(self, x, k):
        a = cwt(x, GRID)
        b = cwt(np.roll(x, k), GRID)
        ok = ~a.mask[:, :-k] & ~b.mask[:, k:]
        scale = max(np.max(np.abs(a.coefficients)), np.max(np.abs(x)), 1e-300)
        assert np.max(np.abs(b.coefficients[:, k:] - a.coefficients[:, :-k]), where=ok, initial=0) < 1e-8 * scale


class TestCoefficientSum:
    def test_zero(self):
        assert np.all(coefficient_sum(cwt(np.zeros(N), GRID)).values == 0.0)

    @settings(max_examples=40, deadline=None)
    @given(series, st.floats(1e-3, 1e3))
    def test_nonnegative_and_homogeneous(self, x, alpha):
        s = coefficient_sum(cwt(x, GRID)).values[0]
        sa = coefficient_sum(cwt(alpha * x, GRID)).values[0]
        assert np.all(s >= 0)
        scale = alpha * max(np.max(s), np.max(np.abs(x)), 1e-300)
        assert np.max(np.abs(sa - alpha * s)) <= 1e-12 * scale

    @settings(max_examples=30, deadline=None)
    @given(series.filter(lambda a: np.ptp(a) > 1e-6), st.floats(1e-3, 1e3))
    def test_argmax_invariant_under_scaling(self, x, alpha):
        s = coefficient_sum(cwt(x, GRID))
        sa = coefficient_sum(cwt(alpha * x, GRID))
        v, va = np.where(s.mask, -1, s.values[0]), np.where(sa.mask, -1, sa.values[0])
        assert np.argmax(v) == np.argmax(va) or math.isclose(v[np.argmax(va)], v.max(), rel_tol=1e-12)

    @pytest.mark.parametrize("p", [150, 256, 400])
    def test_impulse_argmax(self, p):
        x = np.zeros(N)
        x[p] = 1.0
        s = coefficient_sum(cwt(x, GRID))
        assert abs(int(np.argmax(np.where(s.mask, 0, s.values[0]))) - p) <= 2

    def test_mask_is_union_over_scales(self):
        sc = cwt(np.ones(N), GRID)
        np.testing.assert_array_equal(coefficient_sum(sc).mask, sc.mask.any(axis=0))


class TestIndexSeries:
    def test_per_sensor_rows(self):
        rng = np.random.default_rng(0)
        acc = rng.standard_normal((3, N))
        pos = STEP * np.arange(N)
        idx = index_series(pos, acc, GRID, (1, 2, 3), "r")
        assert idx.values.shape == (3, N)
        np.testing.assert_allclose(idx.sensor(2), coefficient_sum(cwt(acc[1], GRID)).values[0])

    def test_shape_checked(self):
        with pytest.raises(WaveletError):
            IndexSeries(np.arange(5.0), np.zeros((2, 4)), np.zeros(5, bool), (1, 2))

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        idx = index_series(STEP * np.arange(N), rng.standard_normal((2, N)), GRID, (1, 2), "run-0001")
        idx.write_csv(tmp_path / "i.csv")
        back = IndexSeries.read_csv(tmp_path / "i.csv", "run-0001")
        np.testing.assert_array_equal(back.values, idx.values)
        np.testing.assert_array_equal(back.mask, idx.mask)
        assert back.sensor_ids == (1, 2)

    def test_scalogram_round_trip(self, tmp_path):
        sc = cwt(np.random.default_rng(1).standard_normal(N), GRID, origin=2.5)
        write_scalogram(sc, tmp_path / "s.bin")
        back = read_scalogram(tmp_path / "s.bin")
        np.testing.assert_array_equal(back.coefficients, sc.coefficients)
        np.testing.assert_array_equal(back.mask, sc.mask)
        np.testing.assert_array_equal(back.grid.scales, sc.grid.scales)
        assert back.origin == 2.5
