import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpdm.schedule import ConfigurationError, make_linear_schedule


def _alpha_bar_extended(T, lo, hi):
    mpmath.mp.dps = 40
    lo, hi = mpmath.mpf(lo), mpmath.mpf(hi)
    prod = mpmath.mpf(1)
    for t in range(1, T + 1):
        beta = lo + (hi - lo) * (t - 1) / (T - 1) if T > 1 else lo
        prod *= 1 - beta
    return prod


class TestConstruction:
    def test_alpha_bar_final_matches_extended_precision_product(self):
        s = make_linear_schedule(1000, 1e-4, 0.02)
        ref = _alpha_bar_extended(1000, "1e-4", "0.02")
        assert float(ref) == pytest.approx(4.04e-5, rel=2e-3)
        assert s.alpha_bar[1000] == pytest.approx(float(ref), rel=1e-10)

    def test_single_step_closed_form(self):
        s = make_linear_schedule(1, 0.5, 0.5)
        assert s.alpha_bar[1] == 0.5
        assert s.A[1] == pytest.approx(1.0, rel=1e-15)
        assert s.B[1] == pytest.approx(0.5 / np.sqrt(0.5), rel=1e-15)

    def test_step_zero_convention(self):
        s = make_linear_schedule(30)
        assert s.alpha_bar[0] == 1.0
        assert s.A[0] == 0.0 and s.B[0] == 0.0
        assert s.posterior_var[1] == 0.0

    def test_betas_span_endpoints(self):
        s = make_linear_schedule(11, 0.01, 0.02)
        np.testing.assert_allclose(s.beta[1:], np.linspace(0.01, 0.02, 11), rtol=0, atol=0)

    @pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02),
                                      (10, 1e-4, 1.0), (2.5, 1e-4, 0.02)])
    def test_invalid_bounds_rejected(self, args):
        with pytest.raises(ConfigurationError):
            make_linear_schedule(*args)

    def test_arrays_are_read_only(self):
        s = make_linear_schedule(10)
        with pytest.raises(ValueError):
            s.beta[1] = 0.5

    def test_fingerprint_tracks_betas(self):
        assert make_linear_schedule(10).fingerprint() == make_linear_schedule(10).fingerprint()
        assert make_linear_schedule(10).fingerprint() != make_linear_schedule(11).fingerprint()
        assert make_linear_schedule(10).fingerprint() != make_linear_schedule(10, 2e-4).fingerprint()


schedules = st.builds(
    lambda T, lo, span: make_linear_schedule(T, lo, min(lo + span, 0.5)),
    st.integers(1, 400), st.floats(1e-5, 0.05), st.floats(0.0, 0.3),
)


class TestInvariants:
    @given(schedules)
    def test_B_equals_A_times_sqrt_one_minus_alpha_bar(self, s):
        t = np.arange(1, s.T + 1)
        np.testing.assert_allclose(s.B[t], s.A[t] * np.sqrt(1 - s.alpha_bar[t]), rtol=1e-12, atol=0)

    @given(schedules)
    def test_A_squared_identity(self, s):
        t = np.arange(1, s.T + 1)
        np.testing.assert_allclose(s.A[t] ** 2, (1 - s.alpha_bar[t]) / s.alpha_bar[t], rtol=1e-12)

    @given(schedules)
    def test_monotone(self, s):
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(np.diff(s.B) > 0)
        assert np.all((s.beta[1:] > 0) & (s.beta[1:] < 1))

    @given(schedules)
    def test_posterior_variance_bounded_by_beta(self, s):
        t = np.arange(1, s.T + 1)
        assert np.all(s.posterior_var[t] <= s.beta[t] + 1e-18)
        assert np.all(s.posterior_var[t] >= 0)
