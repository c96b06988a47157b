import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gms.schedule import build_trajectory, coeffs, make_schedule, trajectory_from


class TestMakeSchedule:
    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_variance_preserving(self, kind):
        sch = make_schedule(kind, 1000)
        np.testing.assert_allclose(sch.alpha**2 + sch.sigma**2, 1.0, atol=1e-14)
        assert sch.alpha[0] == 1.0 and sch.sigma[0] == 0.0

    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_alpha_decreasing(self, kind):
        sch = make_schedule(kind, 1000)
        assert np.all(np.diff(sch.alpha) < 0)
        assert np.all(np.diff(sch.log_snr()[1:]) < 0)

    def test_linear_endpoint(self):
        # alpha_T^2 = prod(1 - beta_i) for the linear beta grid
        sch = make_schedule("linear", 1000)
        betas = np.linspace(1e-4, 0.02, 1000)
        np.testing.assert_allclose(sch.alpha[-1] ** 2, np.prod(1 - betas), rtol=1e-10)
        assert sch.alpha[-1] < 0.01

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            make_schedule("sigmoid", 10)
        with pytest.raises(ValueError):
            make_schedule("linear", 0)


class TestCoeffs:
    def test_identity_pair(self, linear):
        co = coeffs(linear, 400, 400)
        assert (co.a_ts, co.beta_ts, co.lambda2, co.A, co.B) == (1.0, 0.0, 0.0, 1.0, 0.0)

    def test_bridge_from_data_at_zero(self, linear):
        # s = 0: x_s is x_0 itself, so A = 0, B = 1, lambda2 = 0
        co = coeffs(linear, 0, 250)
        np.testing.assert_allclose([co.A, co.B, co.lambda2], [0.0, 1.0, 0.0], atol=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 999), st.integers(1, 1000))
    def test_consistency(self, s, t):
        sch = make_schedule("linear", 1000)
        if s >= t:
            s, t = t - 1, t
        co = coeffs(sch, s, t)
        np.testing.assert_allclose(co.a_ts, sch.alpha[t] / sch.alpha[s], rtol=1e-12)
        np.testing.assert_allclose(co.beta_ts, sch.sigma[t] ** 2 - co.a_ts**2 * sch.sigma[s] ** 2,
                                   rtol=1e-9, atol=1e-15)
        # Gaussian bridge by precision weighting, written independently
        if s > 0:
            prec = 1 / sch.sigma[s] ** 2 + co.a_ts**2 / co.beta_ts
            np.testing.assert_allclose(co.lambda2, 1 / prec, rtol=1e-9)
            np.testing.assert_allclose(co.A, co.a_ts / co.beta_ts / prec, rtol=1e-9)
            np.testing.assert_allclose(co.B, sch.alpha[s] / sch.sigma[s] ** 2 / prec, rtol=1e-9)
        assert co.lambda2 >= 0

    def test_order_checked(self, linear):
        with pytest.raises(ValueError):
            coeffs(linear, 10, 5)
        with pytest.raises(ValueError):
            coeffs(linear, 0, 1001)


class TestTrajectory:
    def test_even_ten(self):
        assert build_trajectory(1000, 10).steps == tuple(range(1000, -1, -100))

    def test_full(self):
        tr = build_trajectory(1000, 1000)
        assert tr.steps == tuple(range(1000, -1, -1)) and tr.K == 1000

    @settings(max_examples=300, deadline=None)
    @given(st.integers(1, 2000), st.data())
    def test_strictly_decreasing(self, T, data):
        K = data.draw(st.integers(1, T))
        tr = build_trajectory(T, K)
        steps = np.array(tr.steps)
        assert len(steps) == K + 1 and steps[0] == T and steps[-1] == 0
        assert np.all(np.diff(steps) < 0)

    def test_pairs(self):
        assert list(build_trajectory(10, 2).pairs()) == [(10, 5), (5, 0)]

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_trajectory(10, 11)
        with pytest.raises(ValueError):
            build_trajectory(10, 0)
        with pytest.raises(ValueError):
            trajectory_from([5, 5, 0])
        assert trajectory_from([7, 3, 0]).K == 2
