import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paoa import device
from paoa.emulator import (
    ArrayModel, CalibrationMap, InvalidSpecError, PixelModel, SweepCurve, UncalibratedPixelError,
    VariabilitySpec, calibrate_array, calibrate_pixel, compensate_drift, gate_voltage, sample_bit,
    sweep_activation, synthesize_array,
)

LN2 = math.log(2.0)
GAIN_1P4 = 0.970814938735373298343  # e / 2.8 from mpmath


def uniform_array(rows=2, cols=2, alpha=1.4, kappa=LN2, zeta=0.05):
    return synthesize_array(VariabilitySpec.uniform(alpha, kappa, zeta), rows, cols, seed=0)


def noiseless_curve(alpha, kappa, vg=np.linspace(-2, 2, 41)):
    return SweepCurve(vg, device.gompertz_prob(alpha, kappa, vg), np.full(vg.shape, 10_000))


class TestSynthesis:
    def test_zero_variance(self):
        a = uniform_array(8, 8)
        assert np.all(a.alpha == 1.4) and np.all(a.kappa_at_ref == LN2) and np.all(a.zeta == 0.05)

    def test_deterministic(self):
        a, b = synthesize_array(seed=5), synthesize_array(seed=5)
        assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.kappa_at_ref, b.kappa_at_ref)
        assert not np.array_equal(a.alpha, synthesize_array(seed=6).alpha)

    def test_alpha_mean_law_of_large_numbers(self):
        a = synthesize_array(VariabilitySpec(), 64, 64, seed=1)
        assert a.size == 4096
        assert abs(a.alpha.mean() / 1.4 - 1) < 0.02
        assert a.alpha.std() / a.alpha.mean() == pytest.approx(0.10, rel=0.1)

    @pytest.mark.parametrize("kw", [dict(alpha_mean=0.0), dict(kappa_mean=-1.0),
                                    dict(alpha_rel_sigma=-0.1),
                                    dict(zeta_mean=0.0, zeta_rel_sigma=0.1)])
    def test_invalid_spec(self, kw):
        with pytest.raises(InvalidSpecError):
            VariabilitySpec(**kw)

    def test_invalid_pixels(self):
        with pytest.raises(InvalidSpecError):
            ArrayModel(1, 2, [1.0, -1.0], [1.0, 1.0], [0.0, 0.0])

    def test_pixel_params_at_temperature(self):
        px = PixelModel(1.4, LN2, 0.05)
        assert px.params(25.0, 35.0).kappa == pytest.approx(LN2 * math.exp(0.5), rel=1e-14)
        assert px.params(25.0).kappa == LN2


class TestSweep:
    def test_midpoint_large_sample(self):
        a = uniform_array()
        curve = sweep_activation(a, 0, [0.0], 1_000_000, np.random.default_rng(0))
        assert abs(curve.p_hat[0] - 0.5) < 0.002

    def test_saturated(self):
        a = uniform_array()
        d = device.descriptors(device.GompertzParams(alpha=1.4, kappa=LN2))
        curve = sweep_activation(a, 1, [d.v_mid + 5 * d.dv_transit], 10_000,
                                 np.random.default_rng(0))
        # 1 - p is about 5e-5 here: at most a handful of misses in 10^4 windows
        assert curve.p_hat[0] >= 0.999

    def test_deterministic_and_bounds(self):
        a = synthesize_array(seed=2, rows=4, cols=4)
        c1 = sweep_activation(a, 3, np.linspace(-1, 1, 5), 1000, np.random.default_rng(9))
        c2 = sweep_activation(a, 3, np.linspace(-1, 1, 5), 1000, np.random.default_rng(9))
        assert np.array_equal(c1.p_hat, c2.p_hat)
        with pytest.raises(IndexError):
            sweep_activation(a, 16, [0.0], 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sweep_activation(a, 0, [0.0], 0, np.random.default_rng(0))


class TestCalibration:
    def test_noiseless_reference_pixel(self):
        cal = calibrate_pixel(noiseless_curve(1.4, LN2))
        assert cal.v_bias == pytest.approx(0.0, abs=1e-9)
        assert cal.gain_k == pytest.approx(GAIN_1P4, rel=1e-9)

    @settings(max_examples=25)
    @given(st.floats(0.8, 2.5), st.floats(0.2, 3.0))
    def test_round_trip_centres_midpoint(self, alpha, kappa):
        v0 = math.log(kappa / LN2) / alpha
        cal = calibrate_pixel(noiseless_curve(alpha, kappa, v0 + np.linspace(-1.5, 1.5, 21) / alpha))
        assert cal.fitted_alpha == pytest.approx(alpha, rel=1e-9)
        assert cal.fitted_kappa == pytest.approx(kappa, rel=1e-9)
        assert cal.gain_k == pytest.approx(math.e / (2 * cal.fitted_alpha), rel=1e-15)
        assert device.gompertz_prob(alpha, kappa, cal.v_bias) == pytest.approx(0.5, abs=1e-9)

    def test_gain_depends_only_on_alpha(self):
        a = calibrate_pixel(noiseless_curve(1.4, 0.5))
        b = calibrate_pixel(noiseless_curve(1.4, 1.5))
        assert a.gain_k == pytest.approx(b.gain_k, rel=1e-9)
        assert abs(a.v_bias - b.v_bias) > 0.1

    def test_variability_containment(self):
        # every pixel of a 64x64 array, whatever its draw, sits within the 3-sigma
        # binomial bound of 1/2 at input 0 after calibration with 10^4 windows
        a = synthesize_array(VariabilitySpec(), 64, 64, seed=3)
        cal = calibrate_array(a, n_windows=10_000, seed=4)
        p = device.gompertz_prob(a.alpha, a.kappa_at_ref, gate_voltage(cal, np.arange(a.size), 0.0))
        assert np.max(np.abs(p - 0.5)) < 3 * math.sqrt(0.25 / 10_000)

    def test_effective_exponent(self):
        # emulated activation in input space is a Gompertz with exponent alpha * k = e / 2
        cal = calibrate_pixel(noiseless_curve(1.7, 0.9))
        x = np.linspace(-2, 2, 9)
        emulated = device.gompertz_prob(1.7, 0.9, cal.v_bias + cal.gain_k * x)
        matched = device.Gompertz(math.e / 2, LN2).prob_plus(x)
        assert np.allclose(emulated, matched, atol=1e-9)

    def test_calibrate_array_order_independent(self):
        a = synthesize_array(seed=1, rows=3, cols=3)
        full = calibrate_array(a, n_windows=2000, seed=8)
        part = calibrate_array(a, n_windows=2000, seed=8, pixels=[7, 2])
        assert part.v_bias[7] == full.v_bias[7] and part.v_bias[2] == full.v_bias[2]
        with pytest.raises(UncalibratedPixelError):
            part[0]


class TestDrift:
    def test_identity_and_value(self):
        cal = calibrate_pixel(noiseless_curve(1.4, LN2))
        px = PixelModel(1.4, LN2, 0.05)
        assert compensate_drift(cal, px, 0.0) == cal
        moved = compensate_drift(cal, px, 10.0)
        assert moved.v_bias - cal.v_bias == pytest.approx(0.5 / 1.4, rel=1e-9)
        assert moved.gain_k == cal.gain_k and moved.fitted_alpha == cal.fitted_alpha

    @given(st.floats(0.8, 2.5), st.floats(0.2, 3.0), st.floats(-15, 15))
    @settings(max_examples=25)
    def test_recentres_after_temperature_change(self, alpha, kappa, d_theta):
        px = PixelModel(alpha, kappa, 0.05)
        cal = calibrate_pixel(noiseless_curve(alpha, kappa))
        moved = compensate_drift(cal, px, d_theta)
        kappa_warm = px.params(25.0, 25.0 + d_theta).kappa
        assert device.gompertz_prob(alpha, kappa_warm, moved.v_bias) == pytest.approx(0.5, abs=1e-9)

    def test_map_compensation_matches_per_pixel(self):
        a = synthesize_array(seed=3, rows=2, cols=3)
        cal = calibrate_array(a, n_windows=5000, seed=0)
        warm = cal.compensated(a, 7.0)
        for i in range(a.size):
            assert warm[i].v_bias == pytest.approx(compensate_drift(cal[i], a.pixel(i), 7.0).v_bias,
                                                   rel=1e-15)
        assert warm.theta == cal.theta + 7.0


class TestSampleBit:
    def setup_method(self):
        self.array = uniform_array()
        self.cal = calibrate_array(self.array, n_windows=10_000, seed=0)
        self.cal.v_bias[:] = 0.0  # exact centre for the reference pixel

    def test_centred(self):
        rng = np.random.default_rng(0)
        n = 20_000
        mean = np.mean([sample_bit(self.array, self.cal, 0, 0.0, rng) for _ in range(n)])
        assert abs(mean) < 3 / math.sqrt(n)

    def test_saturation(self):
        rng = np.random.default_rng(1)
        assert all(sample_bit(self.array, self.cal, 1, 1e3, rng) == 1 for _ in range(100))

    def test_bernoulli_mean(self):
        rng = np.random.default_rng(2)
        n = 100_000
        vg = gate_voltage(self.cal, 2, 0.5)
        p = device.gompertz_prob(1.4, LN2, vg)
        mean = np.mean([sample_bit(self.array, self.cal, 2, 0.5, rng) for _ in range(n)])
        assert abs(mean - (2 * p - 1)) < 3 * 2 * math.sqrt(p * (1 - p) / n)

    def test_uncalibrated(self):
        empty = CalibrationMap.empty(self.array.size, 25.0)
        with pytest.raises(UncalibratedPixelError):
            sample_bit(self.array, empty, 0, 0.0, np.random.default_rng(0))
