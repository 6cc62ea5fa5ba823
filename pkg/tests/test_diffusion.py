"""Unit tests for the schedule, forward noising, and the few-step sampler."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmsa.diffusion import (
    NoiseSchedule,
    add_noise,
    boundary_coeffs,
    build_schedule,
    consistency_apply,
    consistency_apply_traced,
    lcm_sample,
    lcm_sample_traced,
    lcm_timesteps,
)


def make_schedule(T=1000):
    return build_schedule(T)


def toy_schedule(alpha_bar_tail):
    """Hand-built schedule for closed-form checks."""
    bar = np.concatenate([[1.0], np.asarray(alpha_bar_tail, dtype=np.float64)])
    T = len(bar) - 1
    return NoiseSchedule(T=T, alpha_bar=bar, sigma_data=0.5, t_scale=T / 10.0)


class StubDenoiser:
    """Predicts a fixed tensor; counts calls."""

    def __init__(self, shape, pred=None):
        self.latent_shape = shape
        self.pred = np.zeros(shape, dtype=np.float32) if pred is None else pred
        self.calls = []

    def __call__(self, z_t, t, cond, control, capture):
        self.calls.append(t)
        taps = "taps" if capture else None
        return self.pred, taps


class TestBuildSchedule:
    def test_endpoints(self):
        s = make_schedule()
        assert s.alpha_bar[0] == 1.0
        assert s.alpha_bar[1] == pytest.approx(0.9999, abs=1e-12)
        assert 0.0 < s.alpha_bar[-1] < 0.01

    def test_strictly_decreasing(self):
        s = make_schedule()
        assert (np.diff(s.alpha_bar) < 0).all()

    def test_boundary_scaling_fields(self):
        s = make_schedule(500)
        assert s.sigma_data == 0.5
        assert s.t_scale == 50.0

    def test_rejects_bad_T(self):
        with pytest.raises(ValueError):
            build_schedule(0)


class TestAddNoise:
    def test_frozen_example(self):
        s = toy_schedule([0.25])
        out = add_noise(np.array([2.0], dtype=np.float32), s, 1, np.array([1.0], dtype=np.float32))
        assert out[0] == pytest.approx(1.8660254, abs=1e-6)

    def test_t_zero_is_identity(self):
        s = make_schedule()
        z = np.random.default_rng(0).standard_normal((4, 4, 2)).astype(np.float32)
        eps = np.ones_like(z)
        np.testing.assert_array_equal(add_noise(z, s, 0, eps), z)

    def test_t_max_is_nearly_pure_noise(self):
        s = make_schedule()
        z = np.full((8, 8, 4), 100.0, dtype=np.float32)
        eps = np.zeros_like(z)
        out = add_noise(z, s, s.T, eps)
        assert np.abs(out).max() < 100.0 * math.sqrt(s.alpha_bar[s.T]) + 1e-4

    @given(t=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_coefficients_trade_off(self, t):
        s = make_schedule()
        z = np.ones((3, 3, 1), dtype=np.float32)
        eps = np.ones_like(z)
        out = add_noise(z, s, t, eps)
        a = s.alpha_bar[t]
        want = math.sqrt(a) + math.sqrt(1.0 - a)
        np.testing.assert_allclose(out, want, rtol=1e-6)

    def test_rejects_bad_t_and_shape(self):
        s = make_schedule(10)
        z = np.zeros((2, 2, 1), dtype=np.float32)
        with pytest.raises(ValueError):
            add_noise(z, s, 11, z)
        with pytest.raises(ValueError):
            add_noise(z, s, -1, z)
        with pytest.raises(ValueError):
            add_noise(z, s, 5, np.zeros((2, 2, 2), dtype=np.float32))


class TestBoundaryCoeffs:
    def test_clean_boundary(self):
        s = make_schedule()
        assert boundary_coeffs(s, 0) == (1.0, 0.0)

    def test_frozen_t_max(self):
        s = make_schedule()
        c_skip, c_out = boundary_coeffs(s, s.T)
        assert c_skip == pytest.approx(0.25 / 100.25, rel=1e-12)
        assert c_out == pytest.approx(10.0 / math.sqrt(100.25), rel=1e-12)

    def test_c_skip_decreasing_c_out_increasing(self):
        s = make_schedule()
        ts = range(0, 1001, 50)
        skips = [boundary_coeffs(s, t)[0] for t in ts]
        outs = [boundary_coeffs(s, t)[1] for t in ts]
        assert all(a > b for a, b in zip(skips, skips[1:]))
        assert all(a < b for a, b in zip(outs, outs[1:]))


class TestConsistencyApply:
    def test_identity_at_t_zero_bit_exact(self):
        s = make_schedule()
        den = StubDenoiser((4, 4, 2), pred=np.full((4, 4, 2), 9.0, dtype=np.float32))
        z = np.random.default_rng(1).standard_normal((4, 4, 2)).astype(np.float32)
        out = consistency_apply(den, s, z, 0)
        np.testing.assert_array_equal(out, z)
        assert den.calls == []  # boundary short-circuits the backbone

    def test_blend_formula(self):
        s = make_schedule()
        pred = np.full((2, 2, 1), 3.0, dtype=np.float32)
        den = StubDenoiser((2, 2, 1), pred=pred)
        z = np.full((2, 2, 1), 5.0, dtype=np.float32)
        t = 400
        c_skip, c_out = boundary_coeffs(s, t)
        out = consistency_apply(den, s, z, t)
        np.testing.assert_allclose(out, c_skip * 5.0 + c_out * 3.0, rtol=1e-6)

    def test_traced_returns_taps_only_when_captured(self):
        s = make_schedule()
        den = StubDenoiser((2, 2, 1))
        z = np.ones((2, 2, 1), dtype=np.float32)
        _, taps = consistency_apply_traced(den, s, z, 100, capture=True)
        assert taps == "taps"
        _, taps = consistency_apply_traced(den, s, z, 100, capture=False)
        assert taps is None


class TestLcmTimesteps:
    def test_frozen_six_step_ladder(self):
        assert lcm_timesteps(make_schedule(), 6) == [999, 833, 666, 500, 333, 167]

    def test_single_step_starts_at_top(self):
        assert lcm_timesteps(make_schedule(), 1) == [999]

    @given(T=st.integers(10, 2000), n=st.integers(1, 9))
    @settings(max_examples=80, deadline=None)
    def test_strictly_decreasing_and_positive(self, T, n):
        s = make_schedule(T)
        try:
            ts = lcm_timesteps(s, n)
        except ValueError:
            return  # tiny T with large n legitimately has no ladder
        assert len(ts) == n
        assert all(a > b for a, b in zip(ts, ts[1:]))
        assert ts[-1] >= 1
        assert ts[0] <= T - 1

    def test_rejects_bad_counts(self):
        s = make_schedule(10)
        with pytest.raises(ValueError):
            lcm_timesteps(s, 0)
        with pytest.raises(ValueError):
            lcm_timesteps(s, 11)


class TestLcmSample:
    def test_deterministic_per_seed(self):
        s = make_schedule()
        den = StubDenoiser((4, 4, 2))
        a = lcm_sample(den, s, 7, None, 4)
        b = lcm_sample(den, s, 7, None, 4)
        np.testing.assert_array_equal(a, b)

    def test_seeds_differ(self):
        s = make_schedule()
        den = StubDenoiser((4, 4, 2))
        a = lcm_sample(den, s, 1, None, 4)
        b = lcm_sample(den, s, 2, None, 4)
        assert not np.array_equal(a, b)

    def test_visits_ladder_in_order(self):
        s = make_schedule()
        den = StubDenoiser((2, 2, 1))
        lcm_sample(den, s, 0, None, 6)
        assert den.calls == [999, 833, 666, 500, 333, 167]

    def test_zero_predictor_contracts_toward_zero(self):
        # With F == 0 each step keeps only c_skip * z_t, so the sample is
        # heavily shrunk compared with the unit-variance starting noise.
        s = make_schedule()
        den = StubDenoiser((8, 8, 4))
        out = lcm_sample(den, s, 3, None, 6)
        assert float(np.abs(out).mean()) < 0.2

    def test_traced_final_taps(self):
        s = make_schedule()
        den = StubDenoiser((2, 2, 1))
        _, taps = lcm_sample_traced(den, s, 0, None, 3, capture_final=True)
        assert taps == "taps"
        _, taps = lcm_sample_traced(den, s, 0, None, 3, capture_final=False)
        assert taps is None

    def test_output_shape_dtype(self):
        s = make_schedule()
        den = StubDenoiser((4, 4, 2))
        out = lcm_sample(den, s, 0, None, 2)
        assert out.shape == (4, 4, 2)
        assert out.dtype == np.float32
