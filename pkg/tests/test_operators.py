import math

import numpy as np
import pytest

from upsilon_cd import chains as ch
from upsilon_cd import operators as op
from upsilon_cd.errors import (
    DimensionMismatch,
    FieldTooLarge,
    InvalidParameter,
    NonPositiveField,
    NotUnweighted,
)
from upsilon_cd.kernels import (
    HALF_SQUARE,
    IDENTITY,
    LOG_BREGMAN,
    UPSILON,
    UPSILON_PRIME,
    phi_p_prime_kernel,
)

from conftest import random_reversible_chain, random_unweighted_graph_chain


class TestGenerator:
    def test_constant_is_killed(self):
        k3 = ch.complete(3)
        assert np.allclose(op.generator_apply(k3, np.full(3, 2.7)), 0.0)

    def test_two_point_hand_value(self):
        c = ch.two_point(1.0, 2.0)
        assert op.generator_apply(c, np.array([0.0, 1.0])) == pytest.approx([1.0, -2.0])

    def test_k3_hand_value(self):
        k3 = ch.complete(3)
        assert op.generator_apply(k3, np.array([0.0, 1.0, 2.0])) == pytest.approx(
            [3.0, 0.0, -3.0]
        )

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            op.generator_apply(ch.complete(3), np.zeros(4))


class TestPsiAndB:
    def test_psi_identity_is_generator(self, rng):
        chain = random_reversible_chain(rng, 5)
        f = rng.normal(size=5)
        assert op.psi_h(chain, IDENTITY, f) == pytest.approx(
            list(op.generator_apply(chain, f)), rel=1e-14, abs=1e-14
        )

    def test_psi_half_square_is_gamma(self, rng):
        chain = random_reversible_chain(rng, 6)
        f = rng.normal(size=6)
        assert op.psi_h(chain, HALF_SQUARE, f) == pytest.approx(
            list(op.gamma(chain, f)), rel=1e-14
        )

    def test_psi_upsilon_two_point(self):
        c = ch.two_point(1.0, 2.0)
        psi = op.psi_upsilon(c, np.array([0.0, 1.0]))
        assert psi[0] == pytest.approx(math.e - 2.0, rel=1e-14)

    def test_psi_upsilon_nonnegative_and_locality(self, rng):
        for _ in range(30):
            chain = random_reversible_chain(rng)
            f = rng.normal(size=chain.n)
            psi = op.psi_upsilon(chain, f)
            assert np.all(psi >= 0.0)
        # zero exactly when f is constant on the closed neighbourhood
        star = ch.star([1.0, 1.0], [1.0, 1.0])
        f = np.array([1.0, 1.0, 5.0])  # constant on {center, a1}? no: a2 differs
        assert op.psi_upsilon(star, f)[1] == 0.0  # leaf a1 sees only center
        assert op.psi_upsilon(star, f)[0] > 0.0

    def test_b_identity_is_twice_gamma(self, rng):
        chain = random_reversible_chain(rng, 5)
        f, g = rng.normal(size=5), rng.normal(size=5)
        assert op.b_h(chain, IDENTITY, f, g) == pytest.approx(
            list(2.0 * op.gamma(chain, f, g)), rel=1e-13, abs=1e-14
        )

    def test_b_constant_second_arg(self, rng):
        chain = random_reversible_chain(rng, 5)
        f = rng.normal(size=5)
        assert np.allclose(op.b_h(chain, UPSILON_PRIME, f, np.full(5, 3.0)), 0.0)

    def test_exponential_integral_identity(self, rng):
        # (1/2) int e^g B_{ups'}(g, h) dmu = - int e^g L h dmu
        for _ in range(200):
            chain = random_reversible_chain(rng)
            g = rng.normal(size=chain.n)
            h = rng.normal(size=chain.n)
            lhs = 0.5 * float(chain.pi @ (np.exp(g) * op.b_h(chain, UPSILON_PRIME, g, h)))
            rhs = -float(chain.pi @ (np.exp(g) * op.generator_apply(chain, h)))
            scale = max(1.0, abs(lhs), abs(rhs))
            assert abs(lhs - rhs) <= 1e-12 * scale


class TestGamma2:
    def test_two_point_closed_form(self):
        c = ch.two_point(1.0, 1.0)
        f = np.array([0.0, 1.0])
        assert op.gamma(c, f)[0] == pytest.approx(0.5, rel=1e-15)
        assert op.gamma2(c, f)[0] == pytest.approx(1.0, rel=1e-14)

    def test_two_point_formula_any_rates(self, rng):
        # 2 Gamma_2(f)(x) = (3 k(x,~x) k(~x,x) + k(x,~x)^2) (f(~x)-f(x))^2 / 2 ... :
        # Gamma_2(f)(x) = (3ab + a^2) t^2 / 4 at x = 0
        for _ in range(20):
            a, b = rng.uniform(0.2, 3.0, size=2)
            t = rng.normal()
            c = ch.two_point(a, b)
            g2 = op.gamma2(c, np.array([0.0, t]))
            assert g2[0] == pytest.approx((3 * a * b + a * a) * t * t / 4, rel=1e-12)

    def test_psi2_h_half_square_is_gamma2(self, rng):
        chain = random_reversible_chain(rng, 6)
        f = rng.normal(size=6)
        assert op.psi2_h(chain, HALF_SQUARE, f) == pytest.approx(
            list(op.gamma2(chain, f)), rel=1e-12, abs=1e-13
        )

    def test_lattice_identity_field_flat(self):
        lw = ch.lattice_window(1, {1: 1.0, -1: 1.0}, 3)
        f = np.array([float(s) for s in lw.states])
        mid = lw.index("0")
        assert op.gamma2(lw, f)[mid] == pytest.approx(0.0, abs=1e-14)
        assert op.gamma2_lattice(lw, f, mid) == pytest.approx(0.0, abs=1e-14)


class TestPsi2TwoPaths:
    def test_two_point_hand_value(self):
        c = ch.two_point(1.0, 1.0)
        f = np.array([0.0, 1.0])
        expect = 0.5 * (math.exp(-1.0) + math.e)
        assert op.psi2_upsilon(c, f)[0] == pytest.approx(expect, rel=1e-12)
        assert op.psi2_upsilon_expanded(c, f)[0] == pytest.approx(expect, rel=1e-12)

    def test_two_point_general(self, rng):
        # 2 Psi_2(f)(x) = k(~x,x)(e^-t - 1 + t e^t) + k(x,~x)(t e^t - e^t + 1)
        for _ in range(50):
            a, b = rng.uniform(0.2, 3.0, size=2)
            t = rng.normal() * 2
            c = ch.two_point(a, b)
            val = op.psi2_upsilon(c, np.array([0.0, t]))[0]
            expect = 0.5 * a * (
                b * (math.exp(-t) - 1 + t * math.exp(t))
                + a * (t * math.exp(t) - math.exp(t) + 1)
            )
            assert val == pytest.approx(expect, rel=1e-11)

    def test_paths_agree_on_random_draws(self, rng):
        for _ in range(1000):
            chain = random_reversible_chain(rng)
            f = rng.normal(size=chain.n) * rng.choice([0.3, 1.0, 4.0])
            a = op.psi2_upsilon(chain, f)
            b = op.psi2_upsilon_expanded(chain, f)
            scale = np.maximum(1e-12, np.abs(a) + np.abs(b))
            assert np.max(np.abs(a - b) / scale) <= 1e-11

    def test_constant_field_zero(self, rng):
        chain = random_reversible_chain(rng, 5)
        assert np.allclose(op.psi2_upsilon(chain, np.full(5, 1.3)), 0.0, atol=1e-14)

    def test_lattice_closed_form(self, rng):
        lw = ch.lattice_window(1, {1: 0.7, -1: 0.7, 2: 0.2, -2: 0.2}, 6)
        interior = lw.meta["interior"]
        for _ in range(50):
            f = rng.normal(size=lw.n)
            psi2 = op.psi2_upsilon(lw, f)
            g2 = op.gamma2(lw, f)
            for x in interior:
                c1 = op.psi2_upsilon_lattice(lw, f, x)
                c2 = op.gamma2_lattice(lw, f, x)
                assert abs(psi2[x] - c1) <= 1e-11 * max(1.0, abs(c1))
                assert abs(g2[x] - c2) <= 1e-11 * max(1.0, abs(c2))

    def test_lattice_closed_forms_2d(self, rng):
        lw = ch.lattice_window(
            2, {(1, 0): 1.0, (-1, 0): 1.0, (0, 1): 0.5, (0, -1): 0.5}, 3
        )
        assert len(lw.meta["interior"]) == 9
        for _ in range(20):
            f = rng.normal(size=lw.n)
            psi2 = op.psi2_upsilon(lw, f)
            g2 = op.gamma2(lw, f)
            for x in lw.meta["interior"]:
                assert op.psi2_upsilon_lattice(lw, f, x) == pytest.approx(
                    psi2[x], rel=1e-11, abs=1e-12
                )
                assert op.gamma2_lattice(lw, f, x) == pytest.approx(
                    g2[x], rel=1e-11, abs=1e-12
                )

    def test_second_fundamental_identity_nonnegative_on_lattice(self, rng):
        # L Psi_H(f) - B_{H'}(f, Lf) >= 0 for convex H on translation kernels
        lw = ch.lattice_window(1, {1: 1.0, -1: 1.0, 3: 0.5, -3: 0.5}, 8)
        for _ in range(50):
            f = rng.normal(size=lw.n)
            for kernel in (UPSILON, HALF_SQUARE):
                val = 2.0 * op.psi2_h(lw, kernel, f)
                for x in lw.meta["interior"]:
                    assert val[x] >= -1e-12


class TestChainRules:
    def test_log_chain_rule(self, rng):
        for _ in range(200):
            chain = random_reversible_chain(rng)
            f = np.exp(rng.normal(size=chain.n))
            assert op.log_chain_residual(chain, f) <= 1e-12 * max(
                1.0, float(np.max(chain.m1)) * float(np.max(np.abs(np.log(f))))
            )

    def test_log_chain_constant(self):
        k5 = ch.complete(5)
        assert op.log_chain_residual(k5, np.full(5, 2.0)) == 0.0

    def test_log_chain_on_hypercube_exponential(self, rng):
        h3 = ch.hypercube(3)
        g = rng.normal(size=8)
        assert op.log_chain_residual(h3, np.exp(g)) <= 1e-12 * max(
            1.0, float(np.max(np.abs(g))) * 3
        )

    def test_log_chain_requires_positive(self):
        with pytest.raises(NonPositiveField):
            op.log_chain_residual(ch.complete(3), np.array([1.0, -1.0, 2.0]))

    @pytest.mark.parametrize(
        "kernel",
        [HALF_SQUARE, UPSILON, UPSILON_PRIME],
    )
    def test_first_fundamental_identity_free_kernels(self, kernel, rng):
        for _ in range(300):
            chain = random_reversible_chain(rng)
            f = rng.normal(size=chain.n)
            scale = max(1.0, float(np.max(chain.m1)) * math.exp(
                2 * float(np.max(np.abs(f)))
            ))
            assert op.first_fundamental_identity_residual(chain, kernel, f) <= 1e-12 * scale

    @pytest.mark.parametrize("kernel", [LOG_BREGMAN, phi_p_prime_kernel(1.5)])
    def test_first_fundamental_identity_positive_kernels(self, kernel, rng):
        for _ in range(300):
            chain = random_reversible_chain(rng)
            f = np.exp(rng.normal(size=chain.n))
            scale = max(1.0, float(np.max(chain.m1)) * float(np.max(f)))
            assert op.first_fundamental_identity_residual(chain, kernel, f) <= 1e-12 * scale


class TestPOperators:
    def test_constant_field(self):
        k4 = ch.complete(4)
        f = np.full(4, 3.0)
        assert np.allclose(op.psi_p(k4, 1.5, f), 0.0, atol=1e-14)
        assert np.allclose(op.psi2_p(k4, 1.5, f), 0.0, atol=1e-14)

    def test_hand_value_k2(self):
        k2 = ch.complete(2)
        val = op.psi_p(k2, 1.5, np.array([1.0, 4.0]))
        assert val[0] == pytest.approx(1.0, rel=1e-13)

    def test_p_to_one_limit(self, rng):
        chain = random_reversible_chain(rng, 5)
        f = np.exp(rng.normal(size=5))
        near = op.psi_p(chain, 1.0 + 1e-6, f)
        limit = op.psi_upsilon(chain, np.log(f))
        assert near == pytest.approx(list(limit), rel=1e-4, abs=1e-10)
        p2 = op.psi2_p(chain, 1.0 + 1e-6, f)
        lim2 = op.psi2_upsilon(chain, np.log(f))
        assert p2 == pytest.approx(list(lim2), rel=1e-4, abs=1e-9)

    def test_parameter_validation(self):
        k2 = ch.complete(2)
        with pytest.raises(InvalidParameter):
            op.psi_p(k2, 2.3, np.array([1.0, 2.0]))
        with pytest.raises(NonPositiveField):
            op.psi_p(k2, 1.5, np.array([1.0, -2.0]))


class TestMunchCrossCheck:
    def test_agreement_on_unweighted_graphs(self, rng):
        for _ in range(200):
            chain = random_unweighted_graph_chain(rng)
            f = np.exp(rng.normal(size=chain.n))
            a = op.munch_gamma2_log(chain, f)
            b = op.psi2_upsilon(chain, np.log(f))
            scale = np.maximum(1e-9, np.abs(a) + np.abs(b))
            assert np.max(np.abs(a - b) / scale) <= 1e-11

    def test_hypercube_and_cycle(self, rng):
        h2 = ch.hypercube(2)
        f = np.exp(rng.normal(size=4))
        assert op.munch_gamma2_log(h2, f) == pytest.approx(
            list(op.psi2_upsilon(h2, np.log(f))), rel=1e-11, abs=1e-12
        )
        c5 = ch.cycle(5)
        f = np.exp(np.eye(5)[2])
        assert op.munch_gamma2_log(c5, f) == pytest.approx(
            list(op.psi2_upsilon(c5, np.log(f))), rel=1e-11, abs=1e-12
        )

    def test_constant(self):
        h2 = ch.hypercube(2)
        assert np.allclose(op.munch_gamma2_log(h2, np.full(4, 5.0)), 0.0, atol=1e-14)

    def test_weighted_rejected(self):
        c = ch.two_point(1.0, 2.0)
        with pytest.raises(NotUnweighted):
            op.munch_gamma2_log(c, np.array([1.0, 2.0]))


class TestSmallFieldComparison:
    def test_zero_field(self):
        k4 = ch.complete(4)
        rep = op.small_field_comparison(k4, np.zeros(4), 0.01)
        assert rep.ok
        assert rep.psi_lower_slack == 0.0

    def test_small_random_field(self, rng):
        k4 = ch.complete(4)
        f = 1e-3 * rng.normal(size=4)
        f /= max(1.0, np.max(np.abs(f)) / 1e-3)
        rep = op.small_field_comparison(k4, f, 0.01)
        assert rep.ok

    def test_too_large(self):
        k4 = ch.complete(4)
        with pytest.raises(FieldTooLarge):
            op.small_field_comparison(k4, np.array([0.0, 1.0, 0.0, 0.0]), 0.01)

    def test_scaling_limits(self, rng):
        # Psi(lam f)/lam^2 -> Gamma(f), Psi_2(lam f)/lam^2 -> Gamma_2(f) with
        # error O(lam): fit the constant at the coarsest lam, check the rest
        chain = random_reversible_chain(rng, 6)
        f = rng.normal(size=6)
        g = op.gamma(chain, f)
        g2 = op.gamma2(chain, f)
        lams = (1e-2, 1e-3, 1e-4)
        errs = []
        for lam in lams:
            e1 = np.max(np.abs(op.psi_upsilon(chain, lam * f) / lam**2 - g))
            e2 = np.max(np.abs(op.psi2_upsilon(chain, lam * f) / lam**2 - g2))
            errs.append(max(e1, e2))
        fitted_c = errs[0] / lams[0]
        assert np.isfinite(fitted_c)
        for lam, err in zip(lams, errs):
            assert err <= 1.5 * fitted_c * lam
        assert errs[2] <= errs[0] * 0.02  # two decades of lam, linear decay
