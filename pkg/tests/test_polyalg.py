"""Tests for exact polynomial algebra.

Box integration is checked against Gauss-Legendre quadrature, which is exact
for polynomials up to degree 2*nodes - 1 and is computed by entirely different
code (numpy.polynomial.legendre), so it serves as an independent oracle.
"""

import itertools

import numpy as np
import pytest

from lpvjump.polyalg import (
    Box,
    Poly,
    PolyMatrix,
    StructuralError,
    VarSet,
    monomial_key,
    monomials_up_to,
    parse_monomial_key,
    poly_from_coeff_map,
    poly_from_string,
)


def gauss_legendre_box_integral(p: Poly, names, box: Box, nodes: int = 12) -> float:
    """Oracle: tensor Gauss-Legendre quadrature over the box, other vars must be absent."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    axes = []
    for nm in names:
        lo, hi = box.interval(nm)
        axes.append(((hi - lo) / 2 * x + (hi + lo) / 2, (hi - lo) / 2 * w))
    total = 0.0
    for combo in itertools.product(*[range(nodes)] * len(names)):
        pt = {nm: axes[k][0][i] for k, (nm, i) in enumerate(zip(names, combo))}
        wt = 1.0
        for k, i in enumerate(combo):
            wt *= axes[k][1][i]
        total += wt * p.eval(pt)
    return total


def random_poly(rng, varset: VarSet, degree: int, nterms: int = 6, scale: float = 3.0) -> Poly:
    monos = monomials_up_to(varset, degree)
    take = rng.choice(len(monos), size=min(nterms, len(monos)), replace=False)
    return Poly(varset, {monos[i]: scale * rng.standard_normal() for i in take})


class TestPolyArithmetic:
    def test_construction_and_canonicalization(self):
        vs = VarSet(["x", "y"])
        p = Poly(vs, {(1, 0): 2.0, (0, 0): 0.0})
        assert p.terms == {(1, 0): 2.0}
        q = p - p
        assert q.is_zero()
        assert q.degree() == float("-inf")

    def test_tiny_coefficients_dropped_after_arithmetic(self):
        vs = VarSet(["x"])
        p = Poly(vs, {(1,): 1.0})
        q = Poly(vs, {(1,): 1.0 + 1e-16})
        assert (p - q).is_zero()

    def test_ring_axioms_random(self):
        rng = np.random.default_rng(0)
        vs = VarSet(["x", "y", "z"])
        for _ in range(25):
            a = random_poly(rng, vs, 3)
            b = random_poly(rng, vs, 3)
            c = random_poly(rng, vs, 2)
            pt = {nm: rng.uniform(-2, 2) for nm in vs.names}
            lhs = ((a + b) * c).eval(pt)
            rhs = (a * c).eval(pt) + (b * c).eval(pt)
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
            assert (a * b).eval(pt) == pytest.approx(a.eval(pt) * b.eval(pt), rel=1e-10, abs=1e-10)

    def test_degree_and_pow(self):
        vs = VarSet(["x", "y"])
        x, y = Poly.variable(vs, "x"), Poly.variable(vs, "y")
        assert ((x * y + 1) ** 3).degree() == 6
        assert Poly.constant(vs, 5.0).degree() == 0

    def test_degree_cap(self):
        vs = VarSet(["x"])
        x = Poly.variable(vs, "x")
        p = x**32
        with pytest.raises(StructuralError):
            (p * p) * x

    def test_varset_mismatch_rejected(self):
        a = Poly.variable(VarSet(["x"]), "x")
        b = Poly.variable(VarSet(["y"]), "y")
        with pytest.raises(StructuralError):
            a + b


class TestSubstitutionRenaming:
    def test_substitute_removes_vars(self):
        vs = VarSet(["rho", "theta"])
        p = Poly.variable(vs, "rho") * Poly.variable(vs, "theta") + 1
        q = p.substitute({"theta": 2.0})
        assert q.varset == VarSet(["rho"])
        assert q.eval({"rho": 3.0}) == pytest.approx(7.0)

    def test_substitute_constant_kernel(self):
        # constant in theta: substituting theta changes nothing
        vs = VarSet(["rho", "theta"])
        lam = Poly.constant(vs, 5.0)
        assert lam.substitute({"theta": 123.0}).constant_value() == pytest.approx(5.0)

    def test_rename_roundtrip(self):
        vs = VarSet(["rho"])
        p = Poly.variable(vs, "rho") ** 2 + 1
        q = p.rename_vars({"rho": "theta"})
        assert q.varset == VarSet(["theta"])
        assert q.rename_vars({"theta": "rho"}) == p

    def test_rename_collision_rejected(self):
        vs = VarSet(["x", "y"])
        p = Poly.variable(vs, "x") + Poly.variable(vs, "y")
        with pytest.raises(StructuralError):
            p.rename_vars({"x": "y"})

    def test_with_varset_extension_and_projection(self):
        vs1 = VarSet(["rho"])
        vs2 = VarSet(["rho", "theta"])
        p = Poly.variable(vs1, "rho") ** 2
        q = p.with_varset(vs2)
        assert q.eval({"rho": 2.0, "theta": 9.0}) == pytest.approx(4.0)
        assert q.with_varset(vs1) == p
        r = Poly.variable(vs2, "theta")
        with pytest.raises(StructuralError):
            r.with_varset(vs1)


class TestIntegration:
    def test_against_quadrature_oracle_random(self):
        rng = np.random.default_rng(7)
        vs = VarSet(["rho", "theta"])
        box = Box({"theta": (0.25, 5.0)})
        for _ in range(30):
            p = random_poly(rng, vs, 5, nterms=8)
            got = p.integrate_box(["theta"], box)
            # compare the rho-polynomials at sample points
            for rho in np.linspace(0.25, 5.0, 7):
                want = gauss_legendre_box_integral(p.substitute({"rho": rho}), ["theta"], box)
                assert got.eval({"rho": rho}) == pytest.approx(want, rel=1e-9, abs=1e-9)

    def test_two_dim_integration(self):
        rng = np.random.default_rng(11)
        vs = VarSet(["a", "b", "c"])
        box = Box({"a": (-1.0, 2.0), "b": (0.0, 1.5)})
        for _ in range(10):
            p = random_poly(rng, vs, 4, nterms=10)
            got = p.integrate_box(["a", "b"], box)
            assert got.varset == VarSet(["c"])
            for c in np.linspace(-1, 1, 5):
                want = gauss_legendre_box_integral(p.substitute({"c": c}), ["a", "b"], box)
                assert got.eval({"c": c}) == pytest.approx(want, rel=1e-9, abs=1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        vs = VarSet(["x", "y"])
        box = Box({"y": (0.0, 2.0)})
        a = random_poly(rng, vs, 3)
        b = random_poly(rng, vs, 3)
        lhs = (a * 2.5 + b).integrate_box(["y"], box)
        rhs = a.integrate_box(["y"], box) * 2.5 + b.integrate_box(["y"], box)
        for x in np.linspace(-1, 1, 5):
            assert lhs.eval({"x": x}) == pytest.approx(rhs.eval({"x": x}), rel=1e-12, abs=1e-12)

    def test_odd_power_symmetric_interval_is_zero(self):
        vs = VarSet(["x"])
        box = Box({"x": (-3.0, 3.0)})
        p = Poly.variable(vs, "x") ** 3
        assert p.integrate_box(["x"], box).is_zero()

    def test_missing_interval_rejected(self):
        vs = VarSet(["x"])
        p = Poly.variable(vs, "x")
        with pytest.raises(StructuralError):
            p.integrate_box(["x"], Box({"y": (0, 1)}))


class TestTextFormat:
    def test_roundtrip_random(self):
        rng = np.random.default_rng(5)
        vs = VarSet(["rho", "theta"])
        for _ in range(20):
            p = random_poly(rng, vs, 6, nterms=12)
            assert poly_from_coeff_map(p.to_coeff_map(), vs) == p

    def test_key_grammar(self):
        vs = VarSet(["rho", "theta"])
        assert parse_monomial_key("1", vs) == (0, 0)
        assert parse_monomial_key("rho^2*theta", vs) == (2, 1)
        assert monomial_key(vs, (2, 1)) == "rho^2*theta"
        for bad in ["", "rho^0", "rho*rho", "2*rho", "rho^-1", "sigma"]:
            with pytest.raises(StructuralError):
                parse_monomial_key(bad, vs)

    def test_non_number_coefficient_rejected(self):
        vs = VarSet(["x"])
        with pytest.raises(StructuralError):
            poly_from_coeff_map({"x": "a"}, vs)
        with pytest.raises(StructuralError):
            poly_from_coeff_map({"x": True}, vs)


class TestBox:
    def test_measure_and_contains(self):
        b = Box({"x": (0, 2), "y": (-1, 1)})
        assert b.measure() == pytest.approx(4.0)
        assert b.contains({"x": 1, "y": 0})
        assert not b.contains({"x": 3, "y": 0})

    def test_indicator_poly_sign(self):
        vs = VarSet(["x", "y"])
        b = Box({"x": (0, 2), "y": (-1, 1)})
        g = b.indicator_poly(vs)
        assert g.eval({"x": 1.0, "y": 0.0}) > 0
        assert g.eval({"x": 3.0, "y": 0.0}) < 0
        assert g.eval({"x": 0.0, "y": 0.5}) == pytest.approx(0.0)

    def test_degenerate_interval_allowed(self):
        b = Box({"x": (1.0, 1.0)})
        assert b.measure() == 0.0

    def test_bad_interval_rejected(self):
        with pytest.raises(StructuralError):
            Box({"x": (2.0, 1.0)})

    def test_grid(self):
        b = Box({"x": (0, 1), "y": (0, 2)})
        pts = b.grid(3)
        assert len(pts) == 9
        assert {p["y"] for p in pts} == {0.0, 1.0, 2.0}


class TestMonomialBasis:
    def test_count_matches_binomial(self):
        from math import comb

        vs = VarSet(["a", "b", "c"])
        for d in range(5):
            assert len(monomials_up_to(vs, d)) == comb(3 + d, d)

    def test_order_deterministic_and_graded(self):
        vs = VarSet(["x", "y"])
        monos = monomials_up_to(vs, 2)
        assert monos[0] == (0, 0)
        degs = [sum(m) for m in monos]
        assert degs == sorted(degs)


class TestPolyMatrix:
    def test_matmul_against_numpy(self):
        rng = np.random.default_rng(13)
        vs = VarSet(["t"])
        for _ in range(10):
            A = rng.standard_normal((3, 4))
            B = rng.standard_normal((4, 2))
            PA = PolyMatrix.from_numeric(A, vs)
            PB = PolyMatrix.from_numeric(B, vs)
            got = (PA @ PB).eval_at({"t": 0.0})
            assert np.allclose(got, A @ B, atol=1e-12)

    def test_poly_matmul_pointwise(self):
        rng = np.random.default_rng(17)
        vs = VarSet(["rho"])
        r = Poly.variable(vs, "rho")
        A = PolyMatrix.from_rows([[r, 1.0], [r * r, -2.0]], vs)
        B = PolyMatrix.from_rows([[1.0, r], [r, 0.0]], vs)
        for rho in np.linspace(-2, 2, 9):
            got = (A @ B).eval_at({"rho": rho})
            want = A.eval_at({"rho": rho}) @ B.eval_at({"rho": rho})
            assert np.allclose(got, want, atol=1e-10)

    def test_he_symmetric(self):
        vs = VarSet(["rho"])
        r = Poly.variable(vs, "rho")
        A = PolyMatrix.from_rows([[r, 1.0], [0.0, -r]], vs)
        H = A.he()
        assert H.symmetric
        M = H.eval_at({"rho": 1.3})
        assert np.allclose(M, M.T)

    def test_symmetric_flag_validated(self):
        vs = VarSet(["x"])
        x = Poly.variable(vs, "x")
        with pytest.raises(StructuralError):
            PolyMatrix.from_rows([[x, x], [x * x, x]], vs, symmetric=True)

    def test_zero_width_matrices(self):
        vs = VarSet(["x"])
        Z = PolyMatrix.zeros(2, 0, vs)
        assert Z.eval_at({"x": 1.0}).shape == (2, 0)

    def test_integrate_and_rename(self):
        vs = VarSet(["rho", "theta"])
        th = Poly.variable(vs, "theta")
        M = PolyMatrix.from_rows([[th, 0.0], [0.0, th * th]], vs, symmetric=True)
        I = M.integrate_box(["theta"], Box({"theta": (0.0, 2.0)}))
        assert I.entry(0, 0).constant_value() == pytest.approx(2.0)
        assert I.entry(1, 1).constant_value() == pytest.approx(8.0 / 3.0)


class TestPolyFromString:
    def setup_method(self):
        self.vs = VarSet(["rho", "theta"])

    def test_terms_and_signs(self):
        p = poly_from_string("3 - rho + 0.5*rho^2*theta", self.vs)
        assert p.to_coeff_map() == {
            "1": 3.0,
            "rho": -1.0,
            "rho^2*theta": 0.5,
        }

    def test_matches_coeff_map(self):
        p = poly_from_string("2*rho - theta^3 + 1e-3", self.vs)
        q = poly_from_coeff_map({"rho": 2.0, "theta^3": -1.0, "1": 1e-3}, self.vs)
        assert p.to_coeff_map() == q.to_coeff_map()

    def test_repeated_monomials_sum(self):
        assert poly_from_string("rho - rho", self.vs).to_coeff_map() == {}
        p = poly_from_string("rho + 2*rho", self.vs)
        assert p.to_coeff_map() == {"rho": 3.0}

    def test_bare_number_and_leading_sign(self):
        assert poly_from_string("2", self.vs).to_coeff_map() == {"1": 2.0}
        assert poly_from_string("- 2.5e-1*theta^3", self.vs).to_coeff_map() == {"theta^3": -0.25}

    def test_eval_agrees_with_direct_construction(self):
        p = poly_from_string("1 + rho*theta - 4*theta^2", self.vs)
        r = Poly.variable(self.vs, "rho")
        t = Poly.variable(self.vs, "theta")
        q = Poly.constant(self.vs, 1.0) + r * t - t * t * 4.0
        for rho, theta in itertools.product([-1.0, 0.3, 2.0], repeat=2):
            at = {"rho": rho, "theta": theta}
            assert p.eval(at) == pytest.approx(q.eval(at), abs=1e-12)

    @pytest.mark.parametrize("bad", [
        "", "rho rho", "2**rho", "rho + ", "x", "rho^", "1.2.3",
        "rho*2", "+ + rho", "rho +* theta",
    ])
    def test_malformed_rejected(self, bad):
        with pytest.raises(StructuralError):
            poly_from_string(bad, self.vs)

    def test_error_reports_position(self):
        with pytest.raises(StructuralError, match="position"):
            poly_from_string("rho + + 2", self.vs)
