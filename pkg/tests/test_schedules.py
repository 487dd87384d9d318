"""Grid and level-sampler tests.

Formula oracles are evaluated in 50-digit precision with mpmath; the
distribution tests check sampled histograms against exact PMFs with a
chi-square test and the beta tail against adaptive quadrature.
"""

import mpmath
import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import betainc

from clab.schedules import (
    BetaParams,
    HighNoiseInjection,
    LognormalParams,
    NoiseGrid,
    NoiseRange,
    beta_pdf,
    build_grid,
    inject_high_noise,
    karras_grid,
    lognormal_index_pmf,
    loss_weight,
    sample_beta_indices,
    sample_beta_u,
    sample_lognormal,
    sinusoidal_grid,
    sinusoidal_levels_literal,
)

mpmath.mp.dps = 50


def mp_karras(smin, smax, rho, n, i):
    smin, smax, rho = mpmath.mpf(smin), mpmath.mpf(smax), mpmath.mpf(rho)
    lo = smin ** (1 / rho)
    hi = smax ** (1 / rho)
    return float((lo + mpmath.mpf(i) / (n - 1) * (hi - lo)) ** rho)


def mp_sinusoidal(smin, smax, n, i):
    smin, smax = mpmath.mpf(smin), mpmath.mpf(smax)
    return float(smin + (smax - smin) * mpmath.sin(mpmath.pi * i / (2 * (n - 1))))


class TestNoiseRange:
    def test_defaults(self):
        nr = NoiseRange()
        assert (nr.sigma_min, nr.sigma_max, nr.rho) == (0.002, 80.0, 7.0)

    @pytest.mark.parametrize("kw", [
        {"sigma_min": 0.0}, {"sigma_min": -1.0}, {"sigma_min": 2.0, "sigma_max": 1.0},
        {"rho": 0.0}, {"rho": -3.0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NoiseRange(**kw)


class TestKarrasGrid:
    def test_endpoints_default(self):
        g = karras_grid(NoiseRange(), 10)
        assert g.sigmas[0] == pytest.approx(0.002, rel=1e-12)
        assert g.sigmas[-1] == pytest.approx(80.0, rel=1e-12)

    def test_two_point_grid_is_endpoints(self):
        g = karras_grid(NoiseRange(0.01, 5.0, 3.0), 2)
        np.testing.assert_allclose(g.sigmas, [0.01, 5.0], rtol=1e-12)

    def test_midpoint_against_extended_precision(self):
        g = karras_grid(NoiseRange(), 10)
        # index 4 is the paper's i=5 (1-based)
        assert g.sigmas[4] == pytest.approx(mp_karras(0.002, 80, 7, 10, 4), rel=1e-12)

    def test_random_points_against_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            smin = float(rng.uniform(1e-4, 0.5))
            smax = float(rng.uniform(1.0, 200.0))
            rho = float(rng.uniform(0.5, 12.0))
            n = int(rng.integers(2, 400))
            i = int(rng.integers(0, n))
            got = karras_grid(NoiseRange(smin, smax, rho), n).sigmas[i]
            want = mp_karras(smin, smax, rho, n, i)
            assert got == pytest.approx(want, rel=1e-9)

    def test_strictly_increasing(self):
        g = karras_grid(NoiseRange(), 231)
        assert np.all(np.diff(g.sigmas) > 0)

    def test_n_below_two_rejected(self):
        with pytest.raises(ValueError):
            karras_grid(NoiseRange(), 1)


class TestSinusoidalGrid:
    def test_endpoints_exact(self):
        g = sinusoidal_grid(NoiseRange(), 17)
        assert g.sigmas[0] == 0.002
        assert g.sigmas[-1] == pytest.approx(80.0, rel=1e-12)

    def test_quarter_sine_midpoint(self):
        g = sinusoidal_grid(NoiseRange(), 5)
        want = 0.002 + 79.998 * np.sin(np.pi / 4)
        assert g.sigmas[2] == pytest.approx(want, rel=1e-12)
        assert g.sigmas[2] == pytest.approx(mp_sinusoidal(0.002, 80, 5, 2), rel=1e-12)

    def test_random_points_against_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            smin = float(rng.uniform(1e-4, 0.5))
            smax = float(rng.uniform(1.0, 200.0))
            n = int(rng.integers(2, 400))
            i = int(rng.integers(0, n))
            got = sinusoidal_grid(NoiseRange(smin, smax), n).sigmas[i]
            assert got == pytest.approx(mp_sinusoidal(smin, smax, n, i), rel=1e-9)

    def test_dense_near_top(self):
        # quarter-sine spacing shrinks toward sigma_max
        g = sinusoidal_grid(NoiseRange(), 100)
        gaps = np.diff(g.sigmas)
        assert gaps[0] > gaps[-1]
        assert np.all(np.diff(gaps) < 0)

    def test_literal_step_count_amplitude_cannot_reach_sigma_max(self):
        # the alternate reading has amplitude s1-s0=230, landing at 230.002
        levels = sinusoidal_levels_literal(20, 250, 40)
        assert levels[-1] == pytest.approx(230.002)
        assert levels[-1] != pytest.approx(80.0)


class TestBuildGrid:
    def test_dispatch(self):
        assert build_grid("karras", NoiseRange(), 8).source == "karras"
        assert build_grid("sinusoidal", NoiseRange(), 8).source == "sinusoidal"

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_grid("linear", NoiseRange(), 8)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            NoiseGrid(sigmas=np.array([1.0, 1.0, 2.0]), source="karras")
        with pytest.raises(ValueError):
            NoiseGrid(sigmas=np.array([-1.0, 2.0]), source="karras")
        with pytest.raises(ValueError):
            NoiseGrid(sigmas=np.array([1.0, 2.0]), source="spline")


class TestLognormalPmf:
    def test_sums_to_one_and_nonnegative(self):
        for n in [3, 21, 231, 1281]:
            pmf = lognormal_index_pmf(karras_grid(NoiseRange(), n), LognormalParams())
            assert pmf.shape == (n - 1,)
            assert np.all(pmf >= 0)
            assert pmf.sum() == pytest.approx(1.0, abs=1e-12)

    def test_three_level_grid_matches_hand_erf(self):
        g = NoiseGrid(sigmas=np.array([0.5, 1.0, 2.0]), source="karras")
        p = LognormalParams(p_mean=-1.1, p_std=2.0)
        z = (np.log(g.sigmas) - p.p_mean) / (np.sqrt(2) * p.p_std)
        e = [float(mpmath.erf(v)) for v in z]
        mass = np.array([e[1] - e[0], e[2] - e[1]])
        want = mass / mass.sum()
        np.testing.assert_allclose(lognormal_index_pmf(g, p), want, rtol=1e-9)

    def test_mode_near_exp_p_mean(self):
        # full-scale grid: the PMF peaks where the lognormal density does
        g = karras_grid(NoiseRange(), 1281)
        pmf = lognormal_index_pmf(g, LognormalParams())
        peak_sigma = g.sigmas[np.argmax(pmf)]
        assert 0.15 < peak_sigma < 0.7  # e^-1.1 = 0.333

    def test_low_noise_weighted_over_high(self):
        g = karras_grid(NoiseRange(), 231)
        pmf = lognormal_index_pmf(g, LognormalParams())
        low = pmf[g.sigmas[:-1] < 1.0].sum()
        high = pmf[g.sigmas[:-1] >= 40.0].sum()
        assert low > 0.5
        assert high < 0.02


class TestSampleLognormal:
    def test_deterministic_given_seed(self):
        g = karras_grid(NoiseRange(), 64)
        a = sample_lognormal(g, LognormalParams(), 4, np.random.default_rng(3))
        b = sample_lognormal(g, LognormalParams(), 4, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_degenerate_two_level_grid(self):
        g = karras_grid(NoiseRange(), 2)
        idx = sample_lognormal(g, LognormalParams(), 50, np.random.default_rng(0))
        assert np.all(idx == 0)

    def test_chi_square_at_1e5(self):
        g = karras_grid(NoiseRange(), 31)
        pmf = lognormal_index_pmf(g, LognormalParams())
        draws = sample_lognormal(g, LognormalParams(), 100_000, np.random.default_rng(11))
        counts = np.bincount(draws, minlength=pmf.size)
        # pool cells with tiny expectation so the chi-square approximation holds
        exp = pmf * draws.size
        keep = exp >= 5
        pooled_counts, pooled_exp = counts[keep], exp[keep]
        if not keep.all():
            pooled_counts = np.append(pooled_counts, counts[~keep].sum())
            pooled_exp = np.append(pooled_exp, exp[~keep].sum())
        got = stats.chisquare(pooled_counts, pooled_exp)
        assert got.pvalue > 0.01

    def test_count_validation(self):
        g = karras_grid(NoiseRange(), 8)
        with pytest.raises(ValueError):
            sample_lognormal(g, LognormalParams(), 0, np.random.default_rng(0))


class TestBetaPdf:
    def test_uniform_case(self):
        assert beta_pdf(0.37, BetaParams(1.0, 1.0)) == pytest.approx(1.0, rel=1e-12)

    def test_symmetric_two_two(self):
        # quadrature oracle for the normalizer
        kernel = lambda x: x * (1 - x)
        norm, _ = integrate.quad(kernel, 0, 1)
        want = kernel(0.5) / norm
        assert beta_pdf(0.5, BetaParams(2.0, 2.0)) == pytest.approx(want, rel=1e-10)
        assert want == pytest.approx(1.5, rel=1e-12)

    def test_against_scipy_on_random_points(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            a = float(rng.uniform(0.2, 8.0))
            b = float(rng.uniform(0.2, 8.0))
            x = float(rng.uniform(0.01, 0.99))
            assert beta_pdf(x, BetaParams(a, b)) == pytest.approx(
                stats.beta.pdf(x, a, b), rel=1e-10)

    def test_array_input(self):
        x = np.array([0.1, 0.5, 0.9])
        out = beta_pdf(x, BetaParams(2.0, 3.0))
        np.testing.assert_allclose(out, stats.beta.pdf(x, 2, 3), rtol=1e-10)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            beta_pdf(-0.1, BetaParams())
        with pytest.raises(ValueError):
            beta_pdf(1.0001, BetaParams())

    def test_singular_endpoints(self):
        with pytest.raises(ValueError):
            beta_pdf(0.0, BetaParams(alpha=0.5, beta=5.0))
        with pytest.raises(ValueError):
            beta_pdf(1.0, BetaParams(alpha=2.0, beta=0.5))
        # non-singular endpoints are fine
        assert beta_pdf(0.0, BetaParams(1.0, 2.0)) == pytest.approx(2.0)

    def test_high_noise_tail_mass_by_quadrature(self):
        # P(X >= 0.5) for (0.5, 5); compared to the ~4 percent narrative
        tail, _ = integrate.quad(lambda x: beta_pdf(x, BetaParams()), 0.5, 1.0)
        assert tail == pytest.approx(1.0 - betainc(0.5, 5.0, 0.5), rel=1e-8)
        assert 0.0 < tail < 0.04


class TestSampleBetaIndices:
    def test_beta_u_matches_ks(self):
        u = sample_beta_u(BetaParams(), 100_000, np.random.default_rng(2))
        ks = stats.kstest(u, stats.beta(0.5, 5.0).cdf)
        assert ks.pvalue > 0.01

    def test_uniform_case_matches_linear_binning(self):
        g = karras_grid(NoiseRange(), 21)
        n = 100_000
        idx = sample_beta_indices(g, BetaParams(1.0, 1.0), n, np.random.default_rng(5))
        # analytic mass of each pair cell under Uniform(sigma_min, sigma_max)
        widths = np.diff(g.sigmas)
        masses = widths / widths.sum()
        counts = np.bincount(idx, minlength=20)
        got = stats.chisquare(counts, masses * n)
        assert got.pvalue > 0.01

    def test_forced_low_u_clamps_to_first_index(self):
        class ZeroRng:
            def standard_gamma(self, shape, size):
                # first call (numerator) returns 0 -> u = 0
                return np.zeros(size) if shape == 0.5 else np.ones(size)
        g = karras_grid(NoiseRange(), 16)
        idx = sample_beta_indices(g, BetaParams(), 8, ZeroRng())
        assert np.all(idx == 0)

    def test_top_index_clamped_to_pair_range(self):
        class OneRng:
            def standard_gamma(self, shape, size):
                return np.ones(size) if shape == 0.5 else np.zeros(size)
        g = karras_grid(NoiseRange(), 16)
        idx = sample_beta_indices(g, BetaParams(), 8, OneRng())
        assert np.all(idx == g.n - 2)

    def test_tail_fraction_vs_quadrature(self):
        g = karras_grid(NoiseRange(), 231)
        n = 100_000
        idx = sample_beta_indices(g, BetaParams(0.5, 5.0), n, np.random.default_rng(13))
        frac = float(np.mean(g.sigmas[idx] >= 40.0))
        # exact mass of u above the point mapping to sigma=40, adjusted to
        # the grid-snap: sigma_lo >= 40 iff sigma* >= first grid level >= 40
        first_level = g.sigmas[np.searchsorted(g.sigmas, 40.0)]
        u_cut = (first_level - g.sigma_min) / (g.sigma_max - g.sigma_min)
        exact, _ = integrate.quad(lambda x: beta_pdf(x, BetaParams()), u_cut, 1.0)
        assert abs(frac - exact) < 0.005

    def test_deterministic(self):
        g = karras_grid(NoiseRange(), 64)
        a = sample_beta_indices(g, BetaParams(), 32, np.random.default_rng(1))
        b = sample_beta_indices(g, BetaParams(), 32, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)


class TestInjectHighNoise:
    def test_ratio_zero_identity(self):
        sig = np.linspace(0.1, 10, 17)
        out = inject_high_noise(sig, HighNoiseInjection(ratio=0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out, sig)

    def test_full_replacement(self):
        sig = np.full(8, 1.0)
        out = inject_high_noise(sig, HighNoiseInjection(ratio=1.0), np.random.default_rng(0))
        assert np.all((out >= 40.0) & (out <= 80.0))

    def test_exact_counts(self):
        sig = np.full(100, 1.0)
        for ratio, want in [(0.0, 0), (0.02, 2), (0.03, 3), (0.04, 4), (0.05, 5), (0.29, 29)]:
            out = inject_high_noise(sig, HighNoiseInjection(ratio=ratio), np.random.default_rng(3))
            changed = int(np.sum(out != sig))
            assert changed == want
            assert np.all((out[out != sig] >= 40.0) & (out[out != sig] <= 80.0))

    def test_input_not_mutated(self):
        sig = np.full(10, 2.0)
        inject_high_noise(sig, HighNoiseInjection(ratio=0.5), np.random.default_rng(0))
        assert np.all(sig == 2.0)

    def test_band_within_sigma_range(self):
        sig = np.full(50, 1.0)
        out = inject_high_noise(sig, HighNoiseInjection(ratio=1.0), np.random.default_rng(9))
        assert np.all(out <= 80.0) and np.all(out >= 0.002)

    def test_validation(self):
        with pytest.raises(ValueError):
            inject_high_noise(np.array([]), HighNoiseInjection(ratio=0.5), np.random.default_rng(0))
        with pytest.raises(ValueError):
            HighNoiseInjection(ratio=1.5)
        with pytest.raises(ValueError):
            HighNoiseInjection(ratio=0.1, low=50.0, high=40.0)


class TestLossWeight:
    def test_direct_value(self):
        assert loss_weight(1.0, 1.5) == pytest.approx(2.0, rel=1e-12)

    def test_karras_weights_decrease_with_index(self):
        g = karras_grid(NoiseRange(), 1281)
        w = loss_weight(g.sigmas[:-1], g.sigmas[1:])
        assert np.all(np.diff(w) < 0)

    def test_degenerate_gap_rejected(self):
        with pytest.raises(ValueError):
            loss_weight(2.0, 2.0)
        with pytest.raises(ValueError):
            loss_weight(3.0, 2.0)

    def test_antitone_in_gap(self):
        gaps = np.array([0.1, 0.5, 2.0, 10.0])
        w = loss_weight(np.zeros_like(gaps) + 1.0, 1.0 + gaps)
        assert np.all(np.diff(w) < 0)
