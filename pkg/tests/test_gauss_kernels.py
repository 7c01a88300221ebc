"""Oracle tests for the bivariate-Gaussian kernel machinery.

Frozen reference values were produced with 30-digit mpmath evaluation of
the defining integrals; two-dimensional scipy quadrature provides the
independent cross-checks for the generic kernel paths.
"""

import numpy as np
import pytest
from scipy.integrate import dblquad

from fbmxcov.fbm_model import HurstParameter, covariance_rh
from fbmxcov.gclass import (
    constant_fn,
    default_mollifier,
    gsum,
    identity_fn,
    mollify,
    sgn_fn,
    sin_fn,
    step_fn,
    tanh_fn,
)
from fbmxcov.gauss_kernels import (
    BivariateGaussianSpec,
    KernelConvergenceError,
    SingularPairingError,
    bvn_upper_quadrant,
    density_at,
    m_kernel,
    m_sgn_closed,
    one_minus_rho_sq,
    p_kernel,
    p_limit_brownian,
    p_sgn_closed,
    same_time_expectation,
)
from fbmxcov.gclass import GFunction

# mpmath references (30 digits, truncated)
M_SGN_2_1_075 = 0.6359433362261233
P_SGN_2_1_075 = 0.6994440302197551
DENSITY_00_2_1_075 = 0.1748610075549388
RHO_2_1_075 = 0.8408964152537145


def random_hurst(rng, lo=0.55, hi=0.95):
    return HurstParameter(rng.uniform(lo, hi))


class TestDensity:
    def test_standard_product(self):
        spec = BivariateGaussianSpec(1.0, 1.0, 0.0)
        assert density_at(spec, 0.0, 0.0) == pytest.approx(1.0 / (2 * np.pi), rel=1e-14)

    def test_origin_dominates(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            spec = BivariateGaussianSpec(rng.uniform(0.2, 3), rng.uniform(0.2, 3), rng.uniform(-0.99, 0.99))
            x, y = rng.uniform(-5, 5, size=2)
            assert density_at(spec, x, y) <= density_at(spec, 0.0, 0.0) + 1e-15

    def test_fbm_spec_value(self):
        spec = BivariateGaussianSpec.from_times(2.0, 1.0, 0.75)
        assert spec.rho == pytest.approx(RHO_2_1_075, rel=1e-13)
        assert density_at(spec, 0.0, 0.0) == pytest.approx(DENSITY_00_2_1_075, rel=1e-12)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            density_at(BivariateGaussianSpec(1.0, 1.0, 1.0), 0.0, 0.0)

    def test_unit_mass(self):
        spec = BivariateGaussianSpec(1.3, 0.7, 0.6)
        val, _ = dblquad(
            lambda y, x: density_at(spec, x, y), -12, 12, lambda x: -8, lambda x: 8, epsabs=1e-11
        )
        assert val == pytest.approx(1.0, abs=1e-9)


class TestBvnUpperQuadrant:
    def test_independence(self):
        assert bvn_upper_quadrant(0.0, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_classical_quadrant_formula(self):
        # P(X>0, Y>0) = 1/4 + arcsin(rho) / (2 pi)
        rng = np.random.default_rng(3)
        for rho in np.concatenate([rng.uniform(-0.99, 0.99, 20), [0.5, -0.5, 0.999, -0.999]]):
            ref = 0.25 + np.arcsin(rho) / (2 * np.pi)
            assert bvn_upper_quadrant(0.0, 0.0, rho) == pytest.approx(ref, abs=5e-11)
        assert bvn_upper_quadrant(0.0, 0.0, 0.5) == pytest.approx(1.0 / 3.0, abs=5e-12)

    def test_comonotone_limit(self):
        assert bvn_upper_quadrant(0.0, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_marginal_consistency(self):
        from scipy.special import ndtr

        rng = np.random.default_rng(5)
        for _ in range(20):
            b, rho = rng.uniform(-2, 2), rng.uniform(-0.95, 0.95)
            got = bvn_upper_quadrant(-38.0, b, rho)
            assert got == pytest.approx(float(ndtr(-b)), abs=5e-11)

    def test_against_2d_quadrature(self):
        # the spec-level validation: direct adaptive 2-D integration oracle
        cases = [(0.3, -0.7, 0.4), (1.0, 1.2, 0.95), (-0.5, 0.2, -0.98), (0.8, 0.8, 0.99)]
        for a, b, rho in cases:
            spec = BivariateGaussianSpec(1.0, 1.0, rho)
            ref, _ = dblquad(
                lambda y, x: density_at(spec, x, y), a, 9, lambda x: b, lambda x: 9, epsabs=1e-12
            )
            assert bvn_upper_quadrant(a, b, rho) == pytest.approx(ref, abs=5e-11)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(-3, 3, 64)
        b = rng.uniform(-3, 3, 64)
        r = rng.uniform(-0.999, 0.999, 64)
        vec = bvn_upper_quadrant(a, b, r)
        for i in range(64):
            # BLAS reduction order may differ by an ulp between shapes
            assert vec[i] == pytest.approx(bvn_upper_quadrant(a[i], b[i], r[i]), rel=1e-13, abs=1e-16)


class TestMKernel:
    def test_constants(self):
        one = constant_fn(1.0)
        for tau, sigma in [(1.0, 1.0), (2.0, 0.5), (0.3, 4.0)]:
            assert m_kernel(one, one, tau, sigma, 0.75) == pytest.approx(1.0, abs=1e-14)

    def test_identity_gives_covariance(self):
        ident = identity_fn()
        rng = np.random.default_rng(11)
        for _ in range(20):
            hp = random_hurst(rng)
            tau, sigma = rng.uniform(0.1, 3.0, size=2)
            assert m_kernel(ident, ident, tau, sigma, hp) == pytest.approx(
                covariance_rh(tau, sigma, hp), rel=1e-10
            )

    def test_sgn_closed_form_value(self):
        sgn = sgn_fn()
        assert m_kernel(sgn, sgn, 2.0, 1.0, 0.75) == pytest.approx(M_SGN_2_1_075, rel=1e-10)
        assert m_sgn_closed(2.0, 1.0, 0.75) == pytest.approx(M_SGN_2_1_075, rel=1e-13)

    def test_sgn_consistency_random(self):
        sgn = sgn_fn()
        rng = np.random.default_rng(13)
        for _ in range(100):
            hp = random_hurst(rng)
            tau, sigma = rng.uniform(0.05, 4.0, size=2)
            if abs(tau - sigma) < 1e-3:
                continue
            assert m_kernel(sgn, sgn, tau, sigma, hp) == pytest.approx(
                m_sgn_closed(tau, sigma, hp), rel=1e-8
            )

    def test_mixed_vs_2d_quadrature(self):
        hp = HurstParameter(0.7)
        spec = BivariateGaussianSpec.from_times(1.3, 0.6, hp)
        cases = [
            (sin_fn(), tanh_fn(), lambda x, y: np.sin(x) * np.tanh(y)),
            (sgn_fn(), tanh_fn(), lambda x, y: np.sign(x) * np.tanh(y)),
            (gsum(identity_fn(), step_fn([(0.5, 1.0)])), sin_fn(),
             lambda x, y: (x + (x >= 0.5)) * np.sin(y)),
        ]
        for F, G, raw in cases:
            ref, _ = dblquad(
                lambda y, x: raw(x, y) * density_at(spec, x, y),
                -9 * spec.sd_x, 9 * spec.sd_x,
                lambda x: -9 * spec.sd_y, lambda x: 9 * spec.sd_y,
                epsabs=1e-12,
            )
            assert m_kernel(F, G, 1.3, 0.6, hp) == pytest.approx(ref, abs=1e-9)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(17)
        fns = [sgn_fn(), identity_fn(), tanh_fn(), sin_fn(), constant_fn(2.0)]
        for _ in range(20):
            hp = random_hurst(rng)
            F, G = rng.choice(len(fns), 2)
            tau, sigma = rng.uniform(0.1, 3.0, size=2)
            a = m_kernel(fns[F], fns[G], tau, sigma, hp)
            b = m_kernel(fns[G], fns[F], sigma, tau, hp)
            assert a == pytest.approx(b, rel=1e-9, abs=1e-12)

    def test_growth_bound(self):
        from fbmxcov.gclass import linear_growth_bound

        rng = np.random.default_rng(19)
        fns = [sgn_fn(), identity_fn(), tanh_fn(), sin_fn()]
        for _ in range(20):
            hp = random_hurst(rng)
            i, j = rng.choice(len(fns), 2)
            tau, sigma = rng.uniform(0.1, 3.0, size=2)
            mf = linear_growth_bound(fns[i])
            mg = linear_growth_bound(fns[j])
            bound = 2.0 * mf * mg * (1.0 + tau**hp.h) * (1.0 + sigma**hp.h)
            assert abs(m_kernel(fns[i], fns[j], tau, sigma, hp)) <= bound

    def test_same_time_diagonal(self):
        # rho = 1 goes through the one-dimensional path
        assert m_kernel(sgn_fn(), sgn_fn(), 1.3, 1.3, 0.75) == pytest.approx(1.0, rel=1e-10)
        got = m_kernel(identity_fn(), identity_fn(), 1.3, 1.3, 0.75)
        assert got == pytest.approx(1.3**1.5, rel=1e-9)

    def test_representative_independence(self):
        # the jump-point value never enters: compare against quadrature of
        # the right-continuous representative (which differs at x = 0 from
        # the symmetric sgn convention on a Lebesgue-null set)
        hp = HurstParameter(0.75)
        sgn = sgn_fn()
        spec = BivariateGaussianSpec.from_times(1.7, 0.8, hp)
        ref, _ = dblquad(
            lambda y, x: float(sgn(x) * sgn(y)) * density_at(spec, x, y),
            -9 * spec.sd_x, 9 * spec.sd_x,
            lambda x: -9 * spec.sd_y, lambda x: 9 * spec.sd_y,
            epsabs=1e-12,
        )
        assert m_kernel(sgn, sgn, 1.7, 0.8, hp) == pytest.approx(ref, abs=1e-9)

    def test_convergence_error_raised(self):
        wild = GFunction(
            ac_value=lambda x: np.sin(60.0 * np.asarray(x, dtype=float)),
            ac_deriv=lambda x: 60.0 * np.cos(60.0 * np.asarray(x, dtype=float)),
            ac_deriv_bound=60.0,
            label="sin60",
        )
        with pytest.raises(KernelConvergenceError):
            m_kernel(wild, wild, 1.0, 0.5, 0.75, gh_order=6, rtol=1e-10)


class TestPKernel:
    def test_identity_total_mass(self):
        ident = identity_fn()
        rng = np.random.default_rng(23)
        for _ in range(20):
            hp = random_hurst(rng)
            tau, sigma = rng.uniform(0.1, 3.0, size=2)
            assert p_kernel(ident, ident, tau, sigma, hp) == pytest.approx(1.0, rel=1e-10)

    def test_sgn_closed_form(self):
        sgn = sgn_fn()
        assert p_kernel(sgn, sgn, 2.0, 1.0, 0.75) == pytest.approx(P_SGN_2_1_075, rel=1e-12)
        assert p_sgn_closed(2.0, 1.0, 0.75) == pytest.approx(P_SGN_2_1_075, rel=1e-13)

    def test_sgn_is_four_times_density(self):
        # definitional identity: sgn' = 2 delta_0 on each side
        spec = BivariateGaussianSpec.from_times(2.0, 1.0, 0.75)
        assert p_sgn_closed(2.0, 1.0, 0.75) == pytest.approx(
            4.0 * density_at(spec, 0.0, 0.0), rel=1e-14
        )

    def test_sgn_consistency_random(self):
        sgn = sgn_fn()
        rng = np.random.default_rng(29)
        for _ in range(100):
            hp = random_hurst(rng)
            tau, sigma = rng.uniform(0.05, 4.0, size=2)
            if abs(tau - sigma) < 1e-3:
                continue
            assert p_kernel(sgn, sgn, tau, sigma, hp) == pytest.approx(
                p_sgn_closed(tau, sigma, hp), rel=1e-8
            )

    def test_constant_kills_pairing(self):
        assert p_kernel(sgn_fn(), constant_fn(3.0), 2.0, 1.0, 0.75) == 0.0

    def test_density_bound_atom_free(self):
        rng = np.random.default_rng(31)
        for F, G in [(sin_fn(), tanh_fn()), (identity_fn(), sin_fn())]:
            for _ in range(10):
                hp = random_hurst(rng)
                tau, sigma = rng.uniform(0.2, 3.0, size=2)
                p = p_kernel(F, G, tau, sigma, hp)
                assert abs(p) <= F.ac_deriv_bound * G.ac_deriv_bound + 1e-9

    def test_diagonal_atoms_rejected(self):
        with pytest.raises(SingularPairingError):
            p_kernel(sgn_fn(), sgn_fn(), 1.0, 1.0, 0.75)

    def test_diagonal_smooth_ok(self):
        got = p_kernel(sin_fn(), sin_fn(), 1.0, 1.0, 0.75)
        # E cos(Z)^2 with Z ~ N(0,1): (1 + E cos 2Z)/2 = (1 + e^{-2})/2
        assert got == pytest.approx(0.5 * (1 + np.exp(-2.0)), rel=1e-9)

    def test_against_2d_quadrature(self):
        hp = HurstParameter(0.7)
        spec = BivariateGaussianSpec.from_times(1.3, 0.6, hp)
        ref, _ = dblquad(
            lambda y, x: np.cos(x) / np.cosh(y) ** 2 * density_at(spec, x, y),
            -9 * spec.sd_x, 9 * spec.sd_x,
            lambda x: -9 * spec.sd_y, lambda x: 9 * spec.sd_y,
            epsabs=1e-12,
        )
        assert p_kernel(sin_fn(), tanh_fn(), 1.3, 0.6, hp) == pytest.approx(ref, abs=1e-9)

    def test_near_diagonal_stability(self):
        # the quadrature module leans on this: agreement with the closed
        # form persists down to separations near machine scale
        sgn = sgn_fn()
        for d in (1e-3, 1e-6, 1e-9, 1e-12):
            got = p_kernel(sgn, sgn, 1.0, 1.0 - d, 0.75)
            assert got == pytest.approx(p_sgn_closed(1.0, 1.0 - d, 0.75), rel=1e-10)


class TestMollifiedKernels:
    def test_p_kernel_mollifier_convergence(self):
        fam = default_mollifier()
        sgn = sgn_fn()
        target = p_sgn_closed(2.0, 1.0, 0.75)
        devs = []
        for n in (8, 32, 128, 512):
            sn = mollify(sgn, n, fam)
            devs.append(abs(p_kernel(sn, sn, 2.0, 1.0, 0.75) - target))
        assert all(a > b for a, b in zip(devs, devs[1:]))
        assert devs[-1] < 1e-5

    def test_m_kernel_mollifier_convergence(self):
        fam = default_mollifier()
        sgn = sgn_fn()
        target = m_sgn_closed(2.0, 1.0, 0.75)
        devs = []
        for n in (8, 32, 128, 512):
            sn = mollify(sgn, n, fam)
            devs.append(abs(m_kernel(sn, sn, 2.0, 1.0, 0.75) - target))
        assert all(a > b for a, b in zip(devs, devs[1:]))
        assert devs[-1] < 1e-5


class TestPLimitBrownian:
    def test_values(self):
        assert p_limit_brownian(2.0, 1.0) == pytest.approx(2.0 / np.pi, rel=1e-14)
        assert p_limit_brownian(4.0, 1.0) == pytest.approx(2.0 / (np.pi * np.sqrt(3.0)), rel=1e-14)

    def test_diagonal_singular(self):
        with pytest.raises(SingularPairingError):
            p_limit_brownian(1.0, 1.0)

    def test_limit_of_sgn_pairing(self):
        target = p_limit_brownian(2.0, 1.0)
        devs = [
            abs(p_sgn_closed(2.0, 1.0, HurstParameter.limit_study(h)) - target)
            for h in (0.6, 0.55, 0.52)
        ]
        assert devs[0] > devs[1] > devs[2]
        assert devs[-1] < 0.01 * target


class TestOneMinusRhoSq:
    def test_matches_naive_off_diagonal(self):
        rng = np.random.default_rng(37)
        for _ in range(200):
            hp = random_hurst(rng)
            tau, sigma = rng.uniform(0.1, 4.0, size=2)
            from fbmxcov.fbm_model import correlation_rho

            naive = 1.0 - correlation_rho(tau, sigma, hp) ** 2
            stable = one_minus_rho_sq(tau, sigma, hp)
            assert stable == pytest.approx(naive, rel=1e-7, abs=1e-13)

    def test_no_cancellation_near_diagonal(self):
        # naive subtraction dies below d ~ 1e-8; the stable form keeps scaling
        hp = HurstParameter(0.75)
        v1 = one_minus_rho_sq(1.0, 1.0 - 1e-10, hp)
        v2 = one_minus_rho_sq(1.0, 1.0 - 1e-12, hp)
        assert v1 > 0 and v2 > 0
        # local scaling 1 - rho^2 ~ d^{2H}
        assert v1 / v2 == pytest.approx(1e3, rel=1e-3)


class TestSameTimeExpectation:
    def test_sgn_squared(self):
        assert same_time_expectation(sgn_fn(), sgn_fn(), 0.8) == pytest.approx(1.0, rel=1e-12)

    def test_identity_square(self):
        assert same_time_expectation(identity_fn(), identity_fn(), 0.8) == pytest.approx(
            0.64, rel=1e-10
        )

    def test_mixed(self):
        # E sgn(Z) tanh(Z) via dense midpoint oracle
        sd = 1.2
        xs = np.linspace(-12, 12, 2_000_001)
        mid = 0.5 * (xs[1:] + xs[:-1])
        dens = np.exp(-0.5 * (mid / sd) ** 2) / (np.sqrt(2 * np.pi) * sd)
        ref = float(np.sum(np.sign(mid) * np.tanh(mid) * dens) * (xs[1] - xs[0]))
        assert same_time_expectation(sgn_fn(), tanh_fn(), sd) == pytest.approx(ref, abs=1e-8)
