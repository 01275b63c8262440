import math

import numpy as np
import pytest
from scipy.integrate import nquad

from conftest import variables
from roacert.dynamics import VectorField
from roacert.polyalg import (
    MomentVector,
    Poly,
    basis_size,
    box_moments,
    box_volume,
    gradient,
    grlex_key,
    lie_derivative,
    monomial_basis,
    norm_power,
)


def random_poly(rng, n, d, terms=8):
    basis = monomial_basis(n, d)
    idx = rng.choice(len(basis), size=min(terms, len(basis)), replace=False)
    return Poly({basis[i]: rng.uniform(-2, 2) for i in idx}, n)


class TestBasis:
    def test_two_vars_degree_two(self):
        assert monomial_basis(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_degree_zero(self):
        assert monomial_basis(1, 0) == [(0,)]

    def test_three_vars_degree_ten(self):
        # C(13, 3)
        assert len(monomial_basis(3, 10)) == 286
        assert basis_size(3, 10) == 286

    def test_order_is_total_and_graded(self):
        basis = monomial_basis(3, 4)
        keys = [grlex_key(m) for m in basis]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)
        assert [sum(m) for m in basis] == sorted(sum(m) for m in basis)


class TestEval:
    def test_norm_power_at_ones(self):
        assert norm_power(2, 2)([1.0, 1.0]) == 4.0

    def test_zero(self):
        assert Poly.zero(3)([0.3, -1.0, 2.0]) == 0.0

    def test_vanderpol_component(self):
        x1, x2 = variables(2)
        assert (x1 - x2 * (1 - x1**2))([1.0, 2.0]) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            norm_power(2, 1)([1.0, 2.0, 3.0])

    def test_eval_many_matches_pointwise(self, rng):
        p = random_poly(rng, 3, 6)
        X = rng.uniform(-2, 2, (50, 3))
        np.testing.assert_allclose(p.eval_many(X), [p(x) for x in X], rtol=1e-12, atol=1e-12)


class TestArithmetic:
    def test_difference_of_squares(self):
        x1, x2 = variables(2)
        assert (x1 + x2) * (x1 - x2) == x1**2 - x2**2

    def test_cancellation(self, rng):
        p = random_poly(rng, 2, 5)
        assert (p + p.scale(-1.0)).is_zero()

    def test_binomial_cube(self):
        (x,) = variables(1)
        assert (1 + x) ** 3 == Poly({(0,): 1, (1,): 3, (2,): 3, (3,): 1}, 1)

    def test_mismatched_nvars(self):
        with pytest.raises(ValueError):
            Poly.variable(0, 1) + Poly.variable(0, 2)

    def test_degree_rules(self, rng):
        p, q = random_poly(rng, 2, 4), random_poly(rng, 2, 3)
        assert (p + q).degree <= max(p.degree, q.degree)
        assert (p * q).degree == p.degree + q.degree

    def test_product_evaluates_as_product(self, rng):
        for n in (1, 2, 3):
            p, q = random_poly(rng, n, 8), random_poly(rng, n, 8)
            pq = p * q
            X = rng.uniform(-2, 2, (100, n))
            lhs, rhs = pq.eval_many(X), p.eval_many(X) * q.eval_many(X)
            assert np.all(np.abs(lhs - rhs) <= 1e-10 * np.maximum(1.0, np.abs(rhs)))

    def test_linearity(self, rng):
        p, q = random_poly(rng, 2, 5), random_poly(rng, 2, 5)
        X = rng.uniform(-2, 2, (20, 2))
        np.testing.assert_allclose(
            (p.scale(3.0) + q.scale(-0.5)).eval_many(X),
            3.0 * p.eval_many(X) - 0.5 * q.eval_many(X),
            rtol=1e-12, atol=1e-11,
        )

    def test_structural_zero_dropped(self):
        p = Poly({(0,): 1.0, (1,): 1e-20}, 1)
        assert len(p) == 1

    def test_rescale(self):
        x1, x2 = variables(2)
        p = x1**2 * x2 + 3 * x2
        q = p.rescale(2.0)
        assert q([0.5, 1.0]) == pytest.approx(p([1.0, 2.0]))


class TestGradient:
    def test_sum_of_squares(self):
        x1, x2 = variables(2)
        assert gradient(x1**2 + x2**2) == [x1.scale(2.0), x2.scale(2.0)]

    def test_constant(self):
        g = gradient(Poly.constant(5.0, 2))
        assert all(c.is_zero() for c in g) and len(g) == 2

    def test_power_rule(self):
        x1, x2 = variables(2)
        g = gradient(x1**3 * x2)
        assert g[0] == (x1**2 * x2).scale(3.0) and g[1] == x1**3

    def test_against_finite_differences(self, rng):
        h = 1e-5
        for n in (1, 2, 3):
            p = random_poly(rng, n, 6)
            g = gradient(p)
            for x in rng.uniform(-1.5, 1.5, (10, n)):
                for i in range(n):
                    e = np.zeros(n)
                    e[i] = h
                    fd = (p(x + e) - p(x - e)) / (2 * h)
                    assert abs(g[i](x) - fd) <= 1e-6 * max(1.0, abs(fd))


class TestLieDerivative:
    def test_rotation_conserves_norm(self):
        x1, x2 = variables(2)
        assert lie_derivative(x1**2 + x2**2, VectorField([-x2, x1])).is_zero()

    def test_contraction(self):
        x1, x2 = variables(2)
        f = VectorField([-x1, -x2])
        assert lie_derivative(x1**2, f) == (x1**2).scale(-2.0)

    def test_vanderpol(self, vdp):
        x1, x2 = variables(2)
        expected = (x2**2 * (1 - x1**2)).scale(-2.0)
        assert lie_derivative(x1**2 + x2**2, vdp) == expected

    def test_matches_trajectory_derivative(self, vdp, rng):
        from roacert.dynamics import OracleConfig, integrate

        J = norm_power(2, 2) + Poly.variable(0, 2) * Poly.variable(1, 2)
        L = lie_derivative(J, vdp)
        cfg = OracleConfig(rel_tol=1e-12, abs_tol=1e-14)
        h = 1e-4
        for x in rng.uniform(-1, 1, (5, 2)):
            fwd = integrate(vdp, x, h, cfg, stop_on_entry=False).final
            back = VectorField([c.scale(-1.0) for c in vdp.components])
            bwd = integrate(back, x, h, cfg, stop_on_entry=False).final
            fd = (J(fwd) - J(bwd)) / (2 * h)
            assert abs(L(x) - fd) <= 1e-5


class TestNormPower:
    def test_beta_one(self):
        x1, x2 = variables(2)
        assert norm_power(2, 1) == x1**2 + x2**2

    def test_beta_two(self):
        assert norm_power(2, 2) == Poly({(4, 0): 1, (2, 2): 2, (0, 4): 1}, 2)

    def test_three_vars(self):
        p = norm_power(3, 2)
        assert len(p) == 6
        assert sorted(c for _, c in p.items()) == [1, 1, 1, 2, 2, 2]


class TestMoments:
    def test_volume(self):
        assert box_moments(0, [(-1, 1), (-1, 1)])[0] == 4.0

    def test_odd_vanish(self):
        m = box_moments(5, [(-1.5, 1.5), (-2, 2)])
        for e, v in zip(m.basis, m.entries):
            if any(k % 2 for k in e):
                assert v == 0.0

    def test_vanderpol_box_x1_squared(self):
        m = box_moments(2, [(-2, 2), (-2.7, 2.7)])
        assert m.entries[m.basis.index((2, 0))] == pytest.approx(28.8, rel=1e-14)

    def test_length(self):
        assert len(box_moments(8, [(-1, 1)] * 3)) == basis_size(3, 8)

    def test_degenerate_box(self):
        with pytest.raises(ValueError):
            box_moments(2, [(1.0, 1.0)])

    def test_integrate_is_dot_product(self, rng):
        box = [(-1.0, 2.0), (0.5, 1.5)]
        p = random_poly(rng, 2, 4)
        m = box_moments(4, box)
        val, _ = nquad(lambda a, b: p([a, b]), box, opts={"epsabs": 1e-13, "epsrel": 1e-13})
        assert m.integrate(p) == pytest.approx(val, rel=1e-11)

    def test_box_volume(self):
        assert box_volume([(-1, 1)] * 3) == 8.0
        assert isinstance(box_moments(1, [(0, 1)]), MomentVector)


class TestSerialization:
    def test_round_trip_exact(self, rng):
        p = random_poly(rng, 3, 7, terms=30)
        assert Poly.from_records(p.to_records(), 3) == p

    def test_malformed_record(self):
        with pytest.raises(ValueError, match="#1"):
            Poly.from_records([{"exponents": [1], "coefficient": 1.0}, {"exponents": [1]}], 1)

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="exponents"):
            Poly.from_records([{"exponents": [1, 0], "coefficient": 1.0}], 1)


def test_quadrature_all_monomials_small():
    # one representative per degree; the full sweep runs in the acceptance suite
    box = [(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)]
    m = box_moments(4, box)
    for e in [(0, 0, 0), (2, 0, 2), (4, 0, 0), (2, 2, 0)]:
        val, _ = nquad(lambda a, b, c: a ** e[0] * b ** e[1] * c ** e[2], box)
        assert m.entries[m.basis.index(e)] == pytest.approx(val, rel=1e-10)
    assert math.isclose(m.entries[0], 8.0)
