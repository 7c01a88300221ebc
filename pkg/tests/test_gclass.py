"""Coefficient-function representation, pairings, and mollification tests."""

import numpy as np
import pytest

from fbmxcov.gclass import (
    GFunction,
    constant_fn,
    default_mollifier,
    derivative_pairing,
    derivative_pairing_converges,
    evaluate,
    gsum,
    identity_fn,
    linear_growth_bound,
    mollify,
    sgn_fn,
    sin_fn,
    step_fn,
    tanh_fn,
)

GAUSS_DENSITY = lambda x: np.exp(-np.asarray(x, dtype=float) ** 2 / 2) / np.sqrt(2 * np.pi)


@pytest.fixture(scope="module")
def family():
    return default_mollifier()


class TestEvaluate:
    def test_sgn_convention(self):
        sgn = sgn_fn()
        assert evaluate(sgn, 1.0) == 1.0
        assert evaluate(sgn, -1.0) == -1.0
        # right-continuous at the jump
        assert evaluate(sgn, 0.0) == 1.0

    def test_identity(self):
        assert evaluate(identity_fn(), 3.5) == 3.5

    def test_tanh_odd(self):
        assert evaluate(tanh_fn(), 0.0) == 0.0

    def test_vectorized(self):
        sgn = sgn_fn()
        np.testing.assert_allclose(sgn(np.array([-2.0, 0.5, 3.0])), [-1.0, 1.0, 1.0])

    def test_jump_order_validation(self):
        with pytest.raises(ValueError):
            GFunction(jumps=((1.0, 1.0), (0.0, 2.0)))


class TestDerivativePairing:
    def test_sgn_atom(self):
        got = derivative_pairing(sgn_fn(), GAUSS_DENSITY)
        assert got == pytest.approx(2.0 / np.sqrt(2 * np.pi), rel=1e-12)

    def test_identity_density(self):
        assert derivative_pairing(identity_fn(), GAUSS_DENSITY) == pytest.approx(1.0, rel=1e-10)

    def test_tanh_against_midpoint_oracle(self):
        # smoothed bump test function supported on |x| <= 5
        h = lambda x: np.exp(-((np.asarray(x, dtype=float) / 5.0) ** 8)) * np.cos(
            np.asarray(x, dtype=float)
        )
        got = derivative_pairing(tanh_fn(), h)
        # dense midpoint-rule oracle
        xs = np.linspace(-30, 30, 2_000_001)
        mid = 0.5 * (xs[1:] + xs[:-1])
        dens = 1.0 / np.cosh(mid) ** 2
        ref = float(np.sum(h(mid) * dens) * (xs[1] - xs[0]))
        assert got == pytest.approx(ref, abs=1e-6)


class TestLinearGrowthBound:
    def sampled_check(self, F, M, rng, n=10**6):
        x = rng.uniform(-50, 50, size=n)
        assert np.all(np.abs(F(x)) <= M * (1.0 + np.abs(x)) + 1e-12)

    def test_sgn(self):
        rng = np.random.default_rng(3)
        M = linear_growth_bound(sgn_fn())
        self.sampled_check(sgn_fn(), M, rng)

    def test_identity(self):
        rng = np.random.default_rng(5)
        M = linear_growth_bound(identity_fn())
        assert M >= 1.0
        self.sampled_check(identity_fn(), M, rng)

    def test_constant(self):
        rng = np.random.default_rng(7)
        M = linear_growth_bound(constant_fn(5.0))
        assert M >= 5.0
        self.sampled_check(constant_fn(5.0), M, rng)


class TestMollify:
    def test_constant_fixed_point(self, family):
        c = constant_fn(3.25)
        for n in (1, 8, 64):
            cn = mollify(c, n, family)
            x = np.linspace(-4, 4, 17)
            np.testing.assert_allclose(cn(x), 3.25, rtol=0, atol=1e-13)

    def test_sgn_outside_ramp(self, family):
        s64 = mollify(sgn_fn(), 64, family)
        assert s64(1.5 / 64) == pytest.approx(1.0, abs=1e-12)
        assert s64(-1.5 / 64) == pytest.approx(-1.0, abs=1e-12)

    def test_sgn_symmetry_at_origin(self, family):
        for n in (8, 32):
            assert mollify(sgn_fn(), n, family)(0.0) == pytest.approx(0.0, abs=1e-12)

    def test_mollified_is_atom_free(self, family):
        sn = mollify(sgn_fn(), 8, family)
        assert not sn.has_atoms
        assert sn.jumps == ()

    def test_unit_mass(self, family):
        for n in (1, 5, 64):
            assert family.mass(n) == pytest.approx(1.0, abs=1e-10)

    def test_evenness(self, family):
        x = np.linspace(0.0, 0.99, 50)
        np.testing.assert_allclose(family.phi1(x), family.phi1(-x), rtol=0, atol=1e-15)

    def test_pointwise_convergence(self, family):
        rng = np.random.default_rng(11)
        for F in (sgn_fn(), tanh_fn(), gsum(sin_fn(), step_fn([(1.0, -0.5)]))):
            x = rng.uniform(-3, 3, size=20)
            x = x[np.abs(x - 1.0) > 0.05]  # keep away from possible jump
            x = x[np.abs(x) > 0.05]
            prev = None
            for n in (8, 32, 128):
                dev = float(np.max(np.abs(mollify(F, n, family)(x) - F(x))))
                if prev is not None:
                    assert dev < prev or dev < 1e-9
                prev = dev

    def test_uniform_linear_growth(self, family):
        rng = np.random.default_rng(13)
        F = gsum(tanh_fn(), step_fn([(0.0, 2.0), (1.5, -1.0)]))
        M = linear_growth_bound(F)
        for _ in range(20):
            n = int(rng.integers(1, 200))
            Fn = mollify(F, n, family)
            x = rng.uniform(-20, 20, size=500)
            assert np.all(np.abs(Fn(x)) <= M * (1 + np.abs(x)) + 1e-9)

    def test_derivative_bound_bookkeeping(self, family):
        # for purely ac F, |F_n'| <= declared bound of F
        F = tanh_fn()
        for n in (4, 32):
            Fn = mollify(F, n, family)
            x = np.linspace(-5, 5, 2001)
            assert np.max(np.abs(Fn.total_ac_density(x))) <= F.ac_deriv_bound + 1e-12

    def test_l1_mass_pure_jump(self, family):
        # || F_n' ||_1 <= sum |dx_i|
        F = step_fn([(0.0, 2.0), (0.7, -1.5)])
        Fn = mollify(F, 16, family)
        xs = np.linspace(-1.2, 2.0, 400_001)
        l1 = np.trapezoid(np.abs(Fn.total_ac_density(xs)), xs)
        assert l1 <= F.total_jump_mass + 1e-6

    def test_declared_bound_formula(self, family):
        F = sgn_fn()
        for n in (8, 64):
            Fn = mollify(F, n, family)
            assert Fn.total_deriv_bound == pytest.approx(n * family.peak * 2.0, rel=1e-12)


class TestPairingConvergence:
    def test_sgn_sequence(self, family):
        rep = derivative_pairing_converges(sgn_fn(), GAUSS_DENSITY, family, n_list=(4, 16, 64, 256))
        assert rep.limit == pytest.approx(2.0 / np.sqrt(2 * np.pi), rel=1e-10)
        devs = rep.deviations
        assert all(a > b for a, b in zip(devs, devs[1:]))
        assert rep.max_tail_deviation < 1e-4

    def test_smooth_function_immediate(self, family):
        rep = derivative_pairing_converges(sin_fn(), GAUSS_DENSITY, family, n_list=(8, 32))
        # F_n' = F' * phi_n stays within the mollification error of F'
        assert rep.max_tail_deviation < 1e-3

    def test_disjoint_supports_exact_zero(self, family):
        # step at a=2, h vanishing on a neighborhood of 2 wider than 1/n
        F = step_fn([(2.0, 1.0)])
        h = lambda x: np.where(np.abs(np.asarray(x, dtype=float)) <= 1.0,
                               np.cos(np.asarray(x, dtype=float) * np.pi / 2) ** 2, 0.0)
        rep = derivative_pairing_converges(F, h, family, n_list=(4, 16))
        assert rep.values[0] == pytest.approx(0.0, abs=1e-15)
        assert rep.values[1] == pytest.approx(0.0, abs=1e-15)


class TestGSum:
    def test_values(self):
        s = gsum(tanh_fn(), step_fn([(0.0, 2.0)]))
        assert s(1.0) == pytest.approx(np.tanh(1.0) + 2.0, rel=1e-14)
        assert s(-1.0) == pytest.approx(np.tanh(-1.0), rel=1e-14)

    def test_jump_merge(self):
        s = gsum(step_fn([(0.0, 2.0)]), step_fn([(0.0, -2.0)]))
        assert s.jumps == ()
