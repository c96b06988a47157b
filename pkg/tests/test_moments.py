import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import mc_reverse_moments, quadrature_reverse_moments
from gms.errors import NumericalError
from gms.mixture import MixtureDistribution, NoiseMoments, oracle_noise_moments, toy1d, true_reverse_moments, two_dirac
from gms.moments import (
    MomentTriple,
    gaussian_implied_m3,
    moment_deviation,
    reverse_m1,
    reverse_m2,
    reverse_m3,
    reverse_moments,
    third_central_gap,
)
from gms.schedule import coeffs, make_schedule


def printed_third_moment(co, x, e1, e2, e3):
    """Third raw moment with the coefficients as typeset in the source derivation.

    Linear-in-x_0 coefficient ``3 A^2 B^2 x^2 + B``; the derivation gives
    ``3 A^2 B x^2 + 3 lambda2 B``.
    """
    A, B, lam = co.A, co.B, co.lambda2
    return A**3 * x**3 + 3 * lam * A * x + (3 * A**2 * B**2 * x**2 + B) * e1 + 3 * A * B**2 * x * e2 + B**3 * e3


def posterior_x0_moments(dist, sched, x, t):
    from gms.mixture import posterior_components, mixture_raw_moments

    return mixture_raw_moments(*posterior_components(dist, sched, x, t))


class TestReverseMoments:
    def test_identity_step(self, linear, toy):
        co = coeffs(linear, 300, 300)
        x = np.array([[0.4]])
        nm = oracle_noise_moments(toy, linear, x, 300)
        np.testing.assert_allclose(reverse_m1(co, x, nm), x)
        np.testing.assert_allclose(reverse_m2(co, x, nm), x**2)

    def test_zero_noise_mean(self, linear):
        co = coeffs(linear, 100, 300)
        x = np.array([0.7, -0.2])
        nm = NoiseMoments(np.zeros(2), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(reverse_m1(co, x, nm), x / co.a_ts)

    def test_deterministic_posterior_gives_bridge_variance(self, linear):
        co = coeffs(linear, 100, 300)
        m1 = np.array([0.3, -1.1])
        nm = NoiseMoments(m1, m1**2, m1**3)
        m2 = reverse_m2(co, np.zeros(2), nm)
        np.testing.assert_allclose(m2 - reverse_m1(co, np.zeros(2), nm) ** 2, co.lambda2, rtol=1e-10)

    @pytest.mark.parametrize("dist", [toy1d(), two_dirac()], ids=["toy1d", "two_dirac"])
    def test_match_exact_kernel(self, linear, dist):
        rng = np.random.default_rng(11)
        x = rng.normal(0, 1.2, size=(200, 1))
        for s, t in [(0, 100), (200, 500), (700, 1000), (999, 1000)]:
            co = coeffs(linear, s, t)
            got = reverse_moments(co, x, oracle_noise_moments(dist, linear, x, t))
            ref = true_reverse_moments(dist, linear, x, s, t)
            for g, r in zip((got.M1, got.M2, got.M3), ref):
                np.testing.assert_allclose(g, r, rtol=1e-9, atol=1e-12)

    def test_match_quadrature(self, cosine, toy):
        for s, t, x in [(50, 200, 0.1), (300, 600, -0.4), (10, 990, 0.5)]:
            co = coeffs(cosine, s, t)
            nm = oracle_noise_moments(toy, cosine, np.array([x]), t)
            got = np.array([v[0] for v in (reverse_m1(co, np.array([x]), nm), reverse_m2(co, np.array([x]), nm),
                                           reverse_m3(co, np.array([x]), nm))])
            np.testing.assert_allclose(got, quadrature_reverse_moments(toy, cosine, np.array([x]), s, t),
                                       rtol=1e-6, atol=1e-9)

    def test_order_requirements(self, linear):
        co = coeffs(linear, 1, 2)
        nm = NoiseMoments(np.zeros(1))
        with pytest.raises(ValueError):
            reverse_m2(co, np.zeros(1), nm)
        with pytest.raises(ValueError):
            reverse_m3(co, np.zeros(1), NoiseMoments(np.zeros(1), np.ones(1)))

    def test_negative_variance_raises(self, linear):
        co = coeffs(linear, 100, 300)
        nm = NoiseMoments(np.array([1.0]), np.array([-5.0]), np.array([0.0]))
        with pytest.raises(NumericalError):
            reverse_m2(co, np.zeros(1), nm)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 999), st.integers(1, 1000), st.floats(-3, 3))
    def test_variance_nonnegative(self, s, t, x):
        sch = make_schedule("linear", 1000)
        s, t = min(s, t - 1), t
        co = coeffs(sch, s, t)
        nm = oracle_noise_moments(toy1d(), sch, np.array([x]), t)
        assert reverse_moments(co, np.array([x]), nm).var[0] >= 0


class TestPrintedThirdMoment:
    def test_derived_form_in_x0_moments(self, linear, toy):
        # A, B form with the derived coefficients reproduces the exact kernel
        x, s, t = np.array([[0.25]]), 200, 500
        co = coeffs(linear, s, t)
        e1, e2, e3 = posterior_x0_moments(toy, linear, x, t)
        A, B, lam = co.A, co.B, co.lambda2
        derived = (A**3 * x**3 + 3 * lam * A * x + (3 * A**2 * B * x**2 + 3 * lam * B) * e1
                   + 3 * A * B**2 * x * e2 + B**3 * e3)
        np.testing.assert_allclose(derived, true_reverse_moments(toy, linear, x, s, t)[2], rtol=1e-10)

    def test_printed_form_misses_oracle(self, linear, toy):
        x, s, t = np.array([0.5]), 100, 300
        co = coeffs(linear, s, t)
        e1, e2, e3 = (v[0] for v in posterior_x0_moments(toy, linear, x[None], t))
        printed = printed_third_moment(co, x, e1, e2, e3)[0]
        mc = mc_reverse_moments(toy, linear, x, s, t, n=10**6, seed=12)[2, 0]
        ours = reverse_m3(co, x, oracle_noise_moments(toy, linear, x, t))[0]
        np.testing.assert_allclose(ours, mc, rtol=1e-2, atol=1e-3)
        assert abs(printed - mc) > 10 * abs(ours - mc)


class TestDeviation:
    def test_gaussian_implied(self):
        np.testing.assert_allclose(gaussian_implied_m3(np.array([2.0]), np.array([3.0])), [8.0 + 18.0])

    def test_gaussian_data_has_zero_gap(self, linear):
        d = MixtureDistribution(weights=[1.0], means=[[0.3]], vars=[[0.2]])
        x = np.linspace(-2, 2, 9)[:, None]
        co = coeffs(linear, 100, 400)
        nm = oracle_noise_moments(d, linear, x, 400)
        np.testing.assert_allclose(third_central_gap(co, nm), 0.0, atol=1e-12)
        tri = reverse_moments(co, x, nm)
        assert np.all(moment_deviation(tri) < -20)

    def test_gap_agrees_with_raw_difference(self, linear, toy):
        x = np.linspace(-1, 1, 11)[:, None]
        co = coeffs(linear, 300, 600)
        nm = oracle_noise_moments(toy, linear, x, 600)
        tri = reverse_moments(co, x, nm)
        raw = tri.M3 - gaussian_implied_m3(tri.M1, tri.var)
        np.testing.assert_allclose(third_central_gap(co, nm), raw, rtol=1e-6, atol=1e-12)

    def test_from_central(self):
        tri = MomentTriple.from_central(np.array([1.0]), np.array([2.0]), np.array([5.0]))
        np.testing.assert_allclose([tri.M2[0], tri.var[0]], [3.0, 2.0])
