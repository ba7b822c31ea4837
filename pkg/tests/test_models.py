import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from ellipdep import models as m
from ellipdep import numkernels as nk
from ellipdep import samplers as smp
from ellipdep import estimators as est
from ellipdep.errors import DomainError
from ellipdep.models import ModelSpec

S = ModelSpec


class TestModelSpec:
    def test_ranges_enforced(self):
        with pytest.raises(DomainError):
            S.student(0)
        with pytest.raises(DomainError):
            S.lognormal(-0.1)
        with pytest.raises(DomainError):
            S.pseudo(0.4, 1.5)
        with pytest.raises(DomainError):
            S.frank(0.0)
        with pytest.raises(DomainError):
            S.gumbel(1.2)
        with pytest.raises(DomainError):
            S.toy(0.0, math.inf)

    def test_labels(self):
        assert S.student(5).label == "student_nu5"
        assert S.gaussian().label == "gaussian"
        assert S.gumbel(0.5).label == "gumbel_theta0.5"


class TestMomentRatios:
    def test_student_nu6(self):
        assert m.moment_ratios(S.student(6)).f2 == pytest.approx(2.0, rel=1e-15)

    def test_gaussian(self):
        r = m.moment_ratios(S.gaussian())
        assert (r.f1, r.f2) == (1.0, 1.0)

    def test_student_nu4_gamma_oracle(self):
        r = m.moment_ratios(S.student(4))
        exact = 2.0 / 2.0 * float((mpmath.gamma(2) / mpmath.gamma(1.5)) ** 2)
        assert r.f1 == pytest.approx(exact, rel=1e-14)
        assert r.f1 == pytest.approx(4 / math.pi, rel=1e-14)
        assert r.f2 is None

    def test_student_nu_le_2(self):
        with pytest.raises(DomainError):
            m.moment_ratios(S.student(2))

    def test_lognormal_and_pseudo(self):
        assert m.moment_ratios(S.lognormal(0.4)).f2 == pytest.approx(math.exp(0.64))
        assert m.moment_ratios(S.pseudo(0.4, 0.5)).f1 == pytest.approx(math.exp(0.08))
        assert m.moment_ratios(S.pseudo(0.4, 0.5), c_override=1.0).f1 == pytest.approx(math.exp(0.16))

    def test_kurtosis(self):
        assert m.moment_ratios(S.student(5)).kurtosis == pytest.approx(6.0)

    @given(st.floats(2.05, 200))
    def test_at_least_one(self, nu):
        r = m.moment_ratios(S.student(nu))
        assert r.f1 >= 1.0
        if r.f2 is not None:
            assert r.f2 >= 1.0

    def test_student_f1_by_direct_volatility_moments(self):
        # sigma = sqrt(nu / chi2_nu): f1 = E[sigma^2] / E[sigma]^2 by quadrature over the chi2 density
        from scipy import stats
        nu = 7.0
        e1 = integrate.quad(lambda q: math.sqrt(nu / q) * stats.chi2.pdf(q, nu), 0, np.inf)[0]
        e2 = integrate.quad(lambda q: nu / q * stats.chi2.pdf(q, nu), 0, np.inf)[0]
        assert m.moment_ratios(S.student(nu)).f1 == pytest.approx(e2 / e1 ** 2, rel=1e-9)


class TestEllipticalPredictions:
    def test_gaussian(self):
        for rho in (-0.7, 0.0, 0.35, 0.9):
            p = m.elliptical_predictions(S.gaussian(), rho)
            assert p.zeta2 == pytest.approx(rho * rho, abs=1e-15)
            assert p.zeta1 == pytest.approx((nk.d_func(rho) - 1) / (math.pi / 2 - 1), abs=1e-15)

    def test_student_nu6_rho0(self):
        assert m.elliptical_predictions(S.student(6), 0.0).zeta2 == pytest.approx(0.2, abs=1e-15)

    def test_cstar_half(self):
        for model in (S.gaussian(), S.student(3), S.lognormal(0.7)):
            assert m.elliptical_predictions(model, 0.5).cstar == pytest.approx(1 / 3, abs=1e-15)

    def test_undefined_zeta2(self):
        assert m.elliptical_predictions(S.student(4), 0.3).zeta2 is None

    def test_not_elliptical(self):
        with pytest.raises(DomainError):
            m.elliptical_predictions(S.frank(2.0), 0.3)

    @given(st.floats(-1, 1))
    def test_cstar_rho_sign_identity(self, rho):
        p = m.elliptical_predictions(S.student(5), rho)
        assert 0 <= p.cstar <= 0.5
        assert p.rho_sign == pytest.approx(4 * p.cstar - 1, abs=1e-14)

    @pytest.mark.parametrize("model", [S.gaussian(), S.student(4.5), S.student(10), S.lognormal(0.3)])
    def test_residual_quadratic_dependence(self, model):
        f2 = m.moment_ratios(model).f2
        z0 = m.elliptical_predictions(model, 0.0).zeta2
        assert z0 == pytest.approx((f2 - 1) / (3 * f2 - 1), abs=1e-15)
        if model.family is m.Family.GAUSSIAN:
            assert z0 == 0.0
        else:
            assert z0 > 0

    def test_student_nu6_zeta2_mc(self):
        pair = smp.sample_elliptical_pair(S.student(6), 0.0, 10 ** 6, smp.SeedSpec(606))
        sq = np.column_stack([pair.x ** 2, pair.y ** 2])
        # heavy fourth moments make the naive s.e. unreliable; compare over 10 blocks
        blocks = [np.corrcoef(b[:, 0], b[:, 1])[0, 1] for b in np.array_split(sq, 10)]
        se = np.std(blocks, ddof=1) / math.sqrt(10)
        assert abs(np.corrcoef(sq[:, 0], sq[:, 1])[0, 1] - 0.2) < 4 * se + 0.01


class TestStudentTail:
    def test_limits(self):
        assert m.student_tail_asymptote(5, 1.0) == 1.0
        assert m.student_tail_asymptote(5, -1.0) == 0.0

    def test_nu4_rho03_value(self):
        k1 = math.sqrt(5 * 0.7 / 1.3)
        assert k1 == pytest.approx(1.64083, abs=1e-5)
        assert m.student_tail_asymptote(4, 0.3) == pytest.approx(2 - 2 * nk.student_cdf(k1, 5), rel=1e-12)

    def test_beta_values(self):
        assert m.student_tail_beta(4, 0.3) == pytest.approx(0.263, abs=1e-3)
        corr = m.student_tail_beta(4, 0.3) * 0.01 ** 0.5
        assert corr == pytest.approx(0.026, abs=1e-3)

    def test_beta_against_numerical_slope(self):
        # tau(p) - tau* ~ beta eps^(2/nu): fit the slope at small eps from the exact curve
        nu, rho = 4.0, 0.3
        model = S.student(nu)
        tstar = m.student_tail_asymptote(nu, rho)
        eps = np.array([1e-7, 1e-8])
        g = [(m.model_tail_exact(model, rho, 1 - e) - tstar) / e ** (2 / nu) for e in eps]
        # subleading term is O(eps^(2/nu)) relative, so extrapolate linearly in eps^(2/nu)
        h = eps ** (2 / nu)
        slope0 = g[1] - (g[0] - g[1]) / (h[0] - h[1]) * h[1]
        assert slope0 == pytest.approx(m.student_tail_beta(nu, rho), rel=5e-3)

    def test_beta_nonnegative(self):
        for nu in (1.0, 3.0, 5.0, 20.0):
            for rho in (-0.9, 0.0, 0.5, 0.95):
                assert m.student_tail_beta(nu, rho) >= 0

    def test_expansion_limit(self):
        assert m.student_tail_expansion(5, 0.3, 1 - 1e-15) == pytest.approx(m.student_tail_asymptote(5, 0.3), abs=1e-5)

    def test_expansion_degenerate(self):
        with pytest.raises(DomainError):
            m.student_tail_expansion(5, 1.0, 0.99)

    def test_asymptote_decreasing_in_nu(self):
        for rho in (0.1, 0.3, 0.8):
            vals = [m.student_tail_asymptote(nu, rho) for nu in range(3, 51)]
            assert np.all(np.diff(vals) < 0)
        assert m.student_tail_asymptote(200, 0.3) < 0.01

    @pytest.mark.parametrize("nu", [3, 4, 5])
    @pytest.mark.parametrize("rho", [0.0, 0.3, 0.7])
    def test_expansion_error_order(self, nu, rho):
        beta = m.student_tail_beta(nu, rho)
        for p in (0.99, 0.995, 0.999, 0.9999):
            gap = abs(m.model_tail_exact(S.student(nu), rho, p) - m.student_tail_expansion(nu, rho, p))
            assert gap <= 2 * beta * (1 - p) ** (4 / nu)


class TestModelTailExact:
    def test_gaussian_independence(self):
        assert m.model_tail_exact(S.gaussian(), 0.0, 0.95) == pytest.approx(0.05, abs=1e-12)

    def test_corner_symmetries(self):
        for model in (S.gaussian(), S.student(4)):
            for rho in (-0.5, 0.3):
                uu = m.model_tail_exact(model, rho, 0.97, "UU")
                assert m.model_tail_exact(model, rho, 0.97, "LL") == pytest.approx(uu, rel=1e-9)
                assert m.model_tail_exact(model, -rho, 0.97, "UL") == pytest.approx(uu, rel=1e-9)
                assert m.model_tail_exact(model, -rho, 0.97, "LU") == pytest.approx(uu, rel=1e-9)

    def test_gaussian_owen_matches_quadrature_copula(self):
        p, rho = 0.9, 0.4
        c = nk.gaussian_copula(p, p, rho)
        assert m.model_tail_exact(S.gaussian(), rho, p) == pytest.approx((1 - 2 * p + c) / (1 - p), rel=1e-9)

    def test_student_against_copula(self):
        p, rho = 0.95, 0.3
        c = nk.student_copula(p, p, rho, 5.0)
        assert m.model_tail_exact(S.student(5), rho, p) == pytest.approx((1 - 2 * p + c) / (1 - p), rel=1e-8)

    def test_student_mc(self):
        nu, rho, p, T = 5.0, 0.3, 0.95, 10 ** 7
        pair = smp.sample_elliptical_pair(S.student(nu), rho, T, smp.SeedSpec(31))
        xp = nk.student_quantile(p, nu)
        hits = np.count_nonzero((pair.x > xp) & (pair.y > xp))
        exact = m.model_tail_exact(S.student(nu), rho, p)
        joint = exact * (1 - p)
        se = math.sqrt(joint * (1 - joint) / T) / (1 - p)
        assert abs(hits / (T * (1 - p)) - exact) < 3 * se
        # the expansion misses part of the finite-p excess
        assert m.student_tail_expansion(nu, rho, p) < exact

    def test_gumbel_asymptote(self):
        assert m.model_tail_exact(S.gumbel(0.5), 0.0, 1 - 1e-6) == pytest.approx(2 - 2 ** 0.5, abs=1e-3)

    def test_archimedean_corners_match_copula(self):
        for model in (S.frank(-3.0), S.frank(4.0), S.gumbel(0.4)):
            p = 0.9
            c = lambda u, v: m.archimedean_copula(model.family, model.theta, u, v)
            assert m.model_tail_exact(model, 0, p, "UU") == pytest.approx((1 - 2 * p + c(p, p)) / (1 - p), abs=1e-12)
            assert m.model_tail_exact(model, 0, p, "LL") == pytest.approx(c(1 - p, 1 - p) / (1 - p), abs=1e-12)
            assert m.model_tail_exact(model, 0, p, "UL") == pytest.approx((1 - p - c(p, 1 - p)) / (1 - p), abs=1e-12)

    def test_bad_inputs(self):
        with pytest.raises(DomainError):
            m.model_tail_exact(S.lognormal(0.4), 0.3, 0.95)
        with pytest.raises(DomainError):
            m.model_tail_exact(S.gaussian(), 0.3, 1.0)
        with pytest.raises(DomainError):
            m.model_tail_exact(S.gaussian(), 0.3, 0.9, "XX")


class TestDictionary:
    def test_closed_form_matches_root(self):
        for s in (0.2, 0.3, 0.4, 0.8):
            nu = m.lognormal_student_dictionary(s).exact
            root = optimize.brentq(lambda v: (v - 2) / (v - 4) - math.exp(4 * s * s), 4 + 1e-12, 1e6)
            assert nu == pytest.approx(root, rel=1e-10)

    def test_s03_values(self):
        d = m.lognormal_student_dictionary(0.3)
        assert d.approx == pytest.approx(2 + 0.5 / 0.09)
        assert d.approx == pytest.approx(7.56, abs=5e-3)
        assert d.exact == pytest.approx(8.615, abs=1e-3)

    def test_s04_near_five(self):
        d = m.lognormal_student_dictionary(0.4)
        assert d.approx == pytest.approx(5.0, abs=0.2)
        assert m.lognormal_student_dictionary(0.4, match="f1").exact == pytest.approx(5.0, abs=0.1)
        # matching the fourth moment instead lands noticeably higher
        assert d.exact == pytest.approx(6.231, abs=1e-3)

    def test_large_s_limit(self):
        assert 4.0 < m.lognormal_student_dictionary(2.0).exact < 4.0 + 1e-6

    def test_domain(self):
        with pytest.raises(DomainError):
            m.lognormal_student_dictionary(0.0)


class TestPseudoElliptical:
    def test_c1_reduces_to_elliptical(self):
        for s in (0.2, 0.5):
            for r in (-0.4, 0.0, 0.6):
                pe = m.pseudo_elliptical_predictions(r, 1.0, s)
                el = m.elliptical_predictions(S.lognormal(s), r)
                assert pe.rho == pytest.approx(r, abs=1e-12)
                assert pe.zeta1 == pytest.approx(el.zeta1, abs=1e-12)
                assert pe.zeta2 == pytest.approx(el.zeta2, abs=1e-12)
                assert pe.cstar == pytest.approx(el.cstar, abs=1e-12)

    def test_r0_quarter(self):
        for c in (-0.5, 0.0, 0.7):
            assert m.pseudo_elliptical_predictions(0.0, c, 0.4).cstar == 0.25

    def test_rho_value(self):
        assert m.pseudo_elliptical_predictions(0.4, 0.5, 0.4).rho == pytest.approx(0.4 * math.exp(-0.08), rel=1e-14)

    def test_mc(self):
        r, c, s, T = 0.4, 0.5, 0.4, 10 ** 6
        pair = smp.sample_pseudo_elliptical_pair(r, c, s, T, smp.SeedSpec(2104))
        pred = m.pseudo_elliptical_predictions(r, c, s)
        cc = est.corr_coeffs(pair)
        assert abs(cc.rho - pred.rho) < 3 * (1 - pred.rho ** 2) / math.sqrt(T) * 1.5
        cs = est.cstar(est.to_uniform(pair))
        assert abs(cs - pred.cstar) < 3 * math.sqrt(pred.cstar * (1 - pred.cstar) / T)


class TestEllipticityResiduals:
    @given(st.floats(0.001, 0.999))
    def test_elliptical_null(self, rho):
        r = m.ellipticity_residuals(rho, 0.25 + math.asin(rho) / (2 * math.pi))
        assert abs(r.residual) < 1e-12
        assert abs(r.z) < 1e-12

    def test_undefined_z(self):
        r = m.ellipticity_residuals(0.0, 0.27)
        assert r.residual > 0
        assert math.isnan(r.z)
        assert math.isnan(m.ellipticity_residuals(0.3, 0.25).z)

    def test_c_implied_formula(self):
        r = m.ellipticity_residuals(0.4, 0.30, s=0.4)
        assert r.c_implied == pytest.approx(1 + math.log(0.4 / abs(math.cos(0.6 * math.pi))) / 0.16, rel=1e-14)

    def test_c_implied_round_trip(self):
        # forward-simulate a pseudo-elliptical pair and recover its log-vol correlation
        r, c, s, T = 0.5, 0.3, 0.5, 10 ** 6
        pair = smp.sample_pseudo_elliptical_pair(r, c, s, T, smp.SeedSpec(77))
        rho = est.corr_coeffs(pair).rho
        cs = est.cstar(est.to_uniform(pair))
        assert m.ellipticity_residuals(rho, cs, s).c_implied == pytest.approx(c, abs=0.08)

    def test_vectorized(self):
        r = m.ellipticity_residuals(np.array([0.3, -0.2]), np.array([0.3, 0.2]))
        assert r.z.shape == (2,)
        assert np.isnan(r.z[1])


class TestArchimedean:
    def test_frank_independence_limit(self):
        for u, v in [(0.3, 0.4), (0.9, 0.2)]:
            assert m.archimedean_copula("frank", 1e-8, u, v) == pytest.approx(u * v, abs=1e-6)

    def test_gumbel_independence(self):
        assert m.archimedean_copula("gumbel", 1.0, 0.3, 0.6) == pytest.approx(0.18, abs=1e-15)

    def test_gumbel_diagonal(self):
        for p in (0.1, 0.5, 0.9):
            assert m.archimedean_copula("gumbel", 0.5, p, p) == pytest.approx(p ** (2 ** 0.5), rel=1e-13)
        p = 1 - 1e-8
        tau = m.model_tail_exact(S.gumbel(0.5), 0, p)
        assert tau == pytest.approx(2 - 2 ** 0.5, abs=1e-6)

    def test_frank_against_mpmath(self):
        mpmath.mp.dps = 400
        rng = np.random.default_rng(8)
        for theta in (-300.0, -20.0, -1.5, 0.5, 3.0, 40.0):
            for u, v in rng.uniform(0.01, 0.99, (4, 2)):
                t = mpmath.mpf(theta)
                exact = mpmath.log(1 + mpmath.expm1(t * u) * mpmath.expm1(t * v) / mpmath.expm1(t)) / t
                assert m.archimedean_copula("frank", theta, u, v) == pytest.approx(float(exact), abs=1e-13)
        mpmath.mp.dps = 15

    @settings(max_examples=100)
    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.sampled_from([-8.0, -1.0, 0.7, 5.0]))
    def test_frank_generator_identity(self, u, v, theta):
        c = m.archimedean_copula("frank", theta, u, v)
        phi = lambda t: m.archimedean_generator("frank", theta, t)
        assert phi(c) == pytest.approx(phi(u) + phi(v), abs=1e-10)

    @settings(max_examples=50)
    @given(st.floats(0, 1), st.floats(0, 1), st.sampled_from([("frank", -4.0), ("frank", 2.0), ("gumbel", 0.3)]))
    def test_frechet_bounds(self, u, v, fam):
        c = m.archimedean_copula(fam[0], fam[1], u, v)
        assert max(0.0, u + v - 1) <= c <= min(u, v)

    def test_generator_inverse(self):
        for fam, theta in (("frank", -3.0), ("frank", 6.0), ("gumbel", 0.6)):
            t = np.linspace(0.05, 0.95, 7)
            back = m.archimedean_generator_inverse(fam, theta, m.archimedean_generator(fam, theta, t))
            assert np.allclose(back, t, atol=1e-13)

    def test_domain(self):
        with pytest.raises(DomainError):
            m.archimedean_copula("frank", 0.0, 0.3, 0.3)
        with pytest.raises(DomainError):
            m.archimedean_copula("gumbel", 0.0, 0.3, 0.3)
        with pytest.raises(DomainError):
            m.archimedean_copula("frank", 2.0, 1.3, 0.3)

    @pytest.mark.parametrize("theta", [-5.0, -1.0, 1.0, 5.0])
    def test_kendall_quadrature_matches_debye(self, theta):
        assert m.archimedean_kendall_tau("frank", theta) == pytest.approx(m.frank_kendall_tau_debye(theta), abs=1e-9)


class TestFrankCalibration:
    def test_zero(self):
        assert m.frank_calibrate_theta(0.0, 5) == 0.0

    def test_antisymmetric(self):
        assert m.frank_calibrate_theta(-0.3, 5) == -m.frank_calibrate_theta(0.3, 5)

    def test_hits_target(self):
        for rho in (0.1, 0.5, 0.8):
            th = m.frank_calibrate_theta(rho, 5)
            assert abs(m.frank_student_correlation(th, 5) - rho) < 1e-6

    def test_monotone(self):
        ths = [m.frank_calibrate_theta(r, 5) for r in (-0.6, -0.2, 0.2, 0.6)]
        assert np.all(np.diff(ths) < 0)

    def test_correlation_against_dblquad(self):
        from scipy import stats
        theta, nu = -2.5, 5.0
        F = lambda x: stats.t.cdf(x, nu)

        def integrand(y, x):
            u, v = F(x), F(y)
            return m.archimedean_copula("frank", theta, u, v) - u * v

        cov = integrate.dblquad(integrand, -60, 60, -60, 60, epsabs=1e-9, epsrel=1e-9)[0]
        # tails beyond +-60 contribute below 1e-6 for nu = 5
        assert m.frank_student_correlation(theta, nu) == pytest.approx(cov / (nu / (nu - 2)), abs=2e-6)

    def test_mc_round_trip(self):
        nu, T = 5.0, 10 ** 6
        th = m.frank_calibrate_theta(0.3, nu)
        uv = smp.sample_archimedean_pair("frank", th, T, smp.SeedSpec(303))
        x = nk.student_quantile(np.clip(uv.x, 1e-15, 1 - 1e-15), nu)
        y = nk.student_quantile(np.clip(uv.y, 1e-15, 1 - 1e-15), nu)
        r = np.corrcoef(x, y)[0, 1]
        # delta-method s.e. of Pearson rho under heavy tails, from the data
        xs, ys = (x - x.mean()) / x.std(), (y - y.mean()) / y.std()
        se = np.std(xs * ys - r * (xs ** 2 + ys ** 2) / 2) / math.sqrt(T)
        assert abs(r - 0.3) < 3 * se

    def test_domain(self):
        with pytest.raises(DomainError):
            m.frank_calibrate_theta(0.3, 2.0)


class TestToy:
    def test_symmetric(self):
        assert m.toy_cstar(1.3, 1.3) == 0.25
        assert m.toy_cstar(0.0, 1.0) > 0.25
        assert m.toy_cstar(0.0, 1.0) == pytest.approx(0.25 + 1 / (24 * math.pi))
        assert m.toy_cstar(0.0, 1.0) == pytest.approx(0.26326, abs=1e-5)

    def test_exact_quadrature_gaussian_case(self):
        assert m.toy_cstar_exact(0.0, 0.0) == pytest.approx(0.25, abs=1e-12)

    def test_exact_against_mc(self):
        f1, f2 = smp.toy_factors(0.0, 1.0)
        pair = smp.sample_toy_pair(f1, f2, 2 * 10 ** 6, smp.SeedSpec(4))
        mc = np.mean((pair.x < 0) & (pair.y < 0))
        ex = m.toy_cstar_exact(0.0, 1.0)
        assert abs(mc - ex) < 3 * math.sqrt(ex * (1 - ex) / pair.T)

    def test_first_order_agreement_small_kurtosis(self):
        # the cumulant expansion becomes exact as the kurtosis gap shrinks
        for k in (0.1, 0.05):
            gap = m.toy_cstar_exact(0.0, k) - 0.25
            assert gap == pytest.approx(k / (24 * math.pi), rel=0.1)

    def test_nu_for_kurtosis(self):
        assert m.student_nu_for_kurtosis(1.0) == 10.0
        assert math.isinf(m.student_nu_for_kurtosis(0.0))


class TestDeltaProfile:
    def test_central_point_zero_for_elliptical(self):
        dd, da = m.model_delta_profile(S.student(5), 0.3, [0.5])
        assert abs(dd[0]) < 1e-8 and abs(da[0]) < 1e-8

    def test_student_diagonal_positive_ends(self):
        dd, da = m.model_delta_profile(S.student(5), 0.3, [0.02, 0.98])
        assert dd[0] > 0 and dd[1] > 0
        assert da[0] < 0

    def test_gaussian_zero(self):
        dd, da = m.model_delta_profile(S.gaussian(), 0.4, [0.1, 0.5, 0.9])
        assert np.allclose(dd, 0, atol=1e-9) and np.allclose(da, 0, atol=1e-9)
