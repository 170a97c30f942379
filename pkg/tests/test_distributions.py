import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from dcsvb.distributions import (
    Bernoulli,
    BetaParams,
    BkfParams,
    GammaParams,
    GigParams,
    Normal,
    bessel_k,
    bessel_k_ratio,
    bkf_cdf,
    bkf_excess_kurtosis,
    bkf_from_gamma,
    bkf_logpdf,
    bkf_pdf,
    gig_expectations,
    gig_log_normalizer,
    log_bessel_k,
    sample,
)


def k_half_integer(n, x):
    """Closed forms of K_{n+1/2}(x) for n = 0, 1, 2."""
    base = math.sqrt(math.pi / (2 * x)) * math.exp(-x)
    poly = {0: 1.0, 1: 1 + 1 / x, 2: 1 + 3 / x + 3 / x ** 2}[n]
    return base * poly


def k_integral(nu, x):
    """K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt."""
    return integrate.quad(lambda t: math.exp(-x * math.cosh(t))
                          * math.cosh(nu * t), 0, 10.0,
                          epsabs=0, epsrel=1e-13, limit=200)[0]


class TestBesselK:
    def test_half_order_value(self):
        assert bessel_k(0.5, 1.0) == pytest.approx(
            math.sqrt(math.pi / 2) * math.exp(-1), rel=1e-14)
        assert bessel_k(0.5, 1.0) == pytest.approx(0.4610685, abs=5e-8)

    def test_even_in_order(self):
        assert bessel_k(-1.5, 2.0) == pytest.approx(bessel_k(1.5, 2.0),
                                                    rel=1e-15)

    def test_recurrence_against_integral(self):
        lhs = k_integral(2, 2.0) - k_integral(0, 2.0)
        assert bessel_k(2, 2.0) - bessel_k(0, 2.0) == pytest.approx(
            lhs, rel=1e-10)
        assert lhs == pytest.approx((2 * 1 / 2.0) * k_integral(1, 2.0),
                                    rel=1e-10)

    @pytest.mark.parametrize("n", [0, 1, 2])
    def test_half_integer_closed_forms(self, n):
        for x in np.geomspace(0.01, 30, 60):
            assert bessel_k(n + 0.5, x) == pytest.approx(
                k_half_integer(n, x), rel=1e-10)

    def test_three_term_recurrence_grid(self):
        for nu in np.linspace(0.3, 9.0, 12):
            for x in np.geomspace(1e-3, 50, 15):
                lhs = bessel_k(nu + 1, x)
                rhs = bessel_k(nu - 1, x) + 2 * nu / x * bessel_k(nu, x)
                assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_accuracy_vs_mpmath(self):
        for nu in np.linspace(0, 10, 11):
            for x in [1e-6, 1e-3, 0.1, 1.0, 7.5, 50.0]:
                ref = float(mpmath.besselk(nu, x))
                assert bessel_k(nu, x) == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize("nu,x", [(60.0, 0.01), (300.3, 2.0),
                                      (-417.5, 40.0), (75.25, 120.0)])
    def test_log_large_orders(self, nu, x):
        ref = float(mpmath.log(mpmath.besselk(nu, x)))
        assert log_bessel_k(nu, x) == pytest.approx(ref, rel=1e-12)

    def test_ratio(self):
        ref = float(mpmath.besselk(201.5, 3.0) / mpmath.besselk(200.5, 3.0))
        assert bessel_k_ratio(200.5, 3.0) == pytest.approx(ref, rel=1e-11)

    def test_domain(self):
        with pytest.raises(ValueError):
            bessel_k(1.0, 0.0)
        with pytest.raises(ValueError):
            log_bessel_k(1.0, -2.0)


class TestBkf:
    def test_laplace_reduction(self):
        val = bkf_pdf(1.0, BkfParams(1.0, 2.0))
        assert val == pytest.approx(0.5 * math.exp(-1), rel=1e-10)
        for c in [0.5, 1.0, 4.0]:
            for x in [-3.0, 0.2, 1.7]:
                laplace = math.exp(-math.sqrt(2 / c) * abs(x)) / math.sqrt(2 * c)
                assert bkf_pdf(x, BkfParams(1.0, c)) == pytest.approx(
                    laplace, rel=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            prm = BkfParams(rng.uniform(0.2, 6), rng.uniform(0.1, 5))
            x = rng.normal(scale=3, size=10)
            np.testing.assert_allclose(bkf_pdf(x, prm), bkf_pdf(-x, prm),
                                       rtol=1e-15)

    @pytest.mark.parametrize("p", [0.3, 0.5, 1.0, 2.0, 5.0])
    @pytest.mark.parametrize("c", [0.5, 1.0, 4.0])
    def test_normalization(self, p, c):
        prm = BkfParams(p, c)
        half = integrate.quad(lambda x: bkf_pdf(x, prm), 0, 40, limit=400,
                              epsabs=1e-12, epsrel=1e-12)[0]
        # tail beyond 40: the density decays like exp(-sqrt(2/c) x)
        assert bkf_pdf(40.0, prm) * 40 < 1e-6
        assert 2 * half == pytest.approx(1.0, abs=1e-4)

    def test_value_at_zero(self):
        prm = BkfParams(2.0, 1.5)
        near = bkf_pdf(1e-9, prm)
        assert bkf_pdf(0.0, prm) == pytest.approx(near, rel=1e-6)
        assert bkf_pdf(0.0, BkfParams(0.5, 1.0)) == np.inf
        assert bkf_pdf(0.0, BkfParams(0.3, 1.0)) == np.inf
        assert np.isfinite(bkf_logpdf(1e-12, BkfParams(0.3, 1.0)))

    def test_kurtosis_from_moments(self):
        # variance held at 1 while p grows
        prev = np.inf
        for p in [0.5, 1, 2, 4, 8, 16, 64]:
            prm = BkfParams(p, 1.0 / p)
            m2 = 2 * integrate.quad(lambda x: x ** 2 * bkf_pdf(x, prm),
                                    0, 60, limit=400)[0]
            m4 = 2 * integrate.quad(lambda x: x ** 4 * bkf_pdf(x, prm),
                                    0, 60, limit=400)[0]
            kurt = m4 / m2 ** 2 - 3
            assert m2 == pytest.approx(1.0, rel=1e-6)
            assert kurt == pytest.approx(bkf_excess_kurtosis(prm), rel=1e-5)
            assert 0 < kurt < prev
            prev = kurt
        assert prev < 0.05

    def test_cdf_matches_quadrature(self):
        prm = BkfParams(0.7, 2.0)
        x = np.array([-2.0, -0.1, 0.0, 0.3, 5.0])
        ref = [0.5 + math.copysign(integrate.quad(
            lambda u: bkf_pdf(u, prm), 0, abs(t))[0], t) for t in x]
        np.testing.assert_allclose(bkf_cdf(x, prm), ref, atol=1e-9)


class TestBkfFromGamma:
    def test_unit(self):
        assert bkf_from_gamma(GammaParams(1.0, 1.0)) == BkfParams(1.0, 1.0)

    def test_shape_rate(self):
        assert bkf_from_gamma(GammaParams(2.0, 1.0)) == BkfParams(2.0, 1.0)
        assert bkf_from_gamma(GammaParams(3.0, 2.0)) == BkfParams(3.0, 0.5)

    @staticmethod
    def sup_distance(draws, prm):
        xs = np.sort(draws)
        grid = xs[::500]
        F = bkf_cdf(grid, prm)
        right = np.searchsorted(xs, grid, side="right") / xs.size
        left = np.searchsorted(xs, grid, side="left") / xs.size
        return max(np.max(np.abs(right - F)), np.max(np.abs(left - F)))

    def test_monte_carlo_two_one(self):
        rng = np.random.default_rng(20)
        g = GammaParams(2.0, 1.0)
        tau = sample(g, rng, 10 ** 6)
        w = rng.normal(0.0, np.sqrt(tau))
        assert self.sup_distance(w, bkf_from_gamma(g)) < 0.005

    def test_printed_mapping_is_rejected(self):
        # the alternative (a, a / b**2) reading disagrees with the hierarchy
        rng = np.random.default_rng(21)
        tau = sample(GammaParams(2.0, 1.0), rng, 10 ** 5)
        w = rng.normal(0.0, np.sqrt(tau))
        assert self.sup_distance(w, BkfParams(2.0, 2.0)) > 0.05


def gig_quadrature(a, b, p, power):
    f = lambda x: x ** (p - 1 + power) * math.exp(-(a * x + b / x) / 2)
    num = integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
    den = integrate.quad(lambda x: x ** (p - 1) * math.exp(-(a * x + b / x) / 2),
                         0, np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
    return num / den


class TestGig:
    def test_gamma_limit(self):
        mean, inv = gig_expectations(GigParams(4.0, 0.0, 3.0))
        assert mean == pytest.approx(1.5)
        assert inv == pytest.approx(2.0 / 2.0)
        assert gig_expectations(GigParams(4.0, 0.0, 0.5))[1] == math.inf

    def test_invalid(self):
        with pytest.raises(ValueError):
            GigParams(1.0, 0.0, -1.0)
        with pytest.raises(ValueError):
            GigParams(0.0, 1.0, 1.0)

    def test_quadrature_reference_point(self):
        mean, inv = gig_expectations(GigParams(2.0, 2.0, 0.5))
        assert mean == pytest.approx(gig_quadrature(2, 2, 0.5, 1), rel=1e-8)
        assert inv == pytest.approx(gig_quadrature(2, 2, 0.5, -1), rel=1e-8)

    @pytest.mark.parametrize("a", [0.2, 2.0, 7.0])
    @pytest.mark.parametrize("b", [0.05, 1.0, 30.0])
    @pytest.mark.parametrize("p", [-6.5, -1.0, 0.0, 0.5, 3.0])
    def test_quadrature_grid(self, a, b, p):
        mean, inv = gig_expectations(GigParams(a, b, p))
        assert mean == pytest.approx(gig_quadrature(a, b, p, 1), rel=1e-8)
        assert inv == pytest.approx(gig_quadrature(a, b, p, -1), rel=1e-8)
        assert mean * inv >= 1.0

    def test_jensen_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            prm = GigParams(rng.uniform(0.01, 10), rng.uniform(0.01, 100),
                            rng.uniform(-300, 20))
            mean, inv = gig_expectations(prm)
            assert np.isfinite(mean) and np.isfinite(inv)
            assert mean > 0 and inv > 0
            assert mean * inv >= 1.0 - 1e-12

    def test_log_normalizer(self):
        a, b, p = 1.3, 0.7, -2.2
        ref = integrate.quad(
            lambda x: x ** (p - 1) * math.exp(-(a * x + b / x) / 2),
            0, np.inf, epsrel=1e-12)[0]
        assert gig_log_normalizer(a, b, p) == pytest.approx(math.log(ref),
                                                            rel=1e-10)
        assert gig_log_normalizer(2.0, 0.0, 3.0) == pytest.approx(
            math.lgamma(3.0))


class TestSampling:
    def test_bernoulli_one(self):
        rng = np.random.default_rng(0)
        assert np.all(sample(Bernoulli(1.0), rng, 1000) == 1)
        assert np.all(sample(Bernoulli(0.0), rng, 1000) == 0)

    def test_gamma_mean(self):
        rng = np.random.default_rng(7)
        draws = sample(GammaParams(5.0, 5.0), rng, 10 ** 6)
        assert abs(draws.mean() - 1.0) < 0.01

    def test_reproducible(self):
        for dist in [GammaParams(2, 3), BetaParams(1, 4), Bernoulli(0.3),
                     Normal(1.0, 2.0)]:
            a = sample(dist, np.random.default_rng(11), 50)
            b = sample(dist, np.random.default_rng(11), 50)
            np.testing.assert_array_equal(a, b)

    def test_invalid(self):
        with pytest.raises(ValueError):
            GammaParams(0.0, 1.0)
        with pytest.raises(ValueError):
            BetaParams(1.0, -1.0)
        with pytest.raises(ValueError):
            Bernoulli(1.5)
        with pytest.raises(TypeError):
            sample(3.0, np.random.default_rng())
