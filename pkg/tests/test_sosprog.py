"""Tests for the SOS-to-SDP compiler.

Feasibility oracles are classical: a univariate polynomial is SOS iff it is
globally nonnegative, so global minima computed by calculus/numpy serve as
ground truth; the Gram round-trip check builds the expression from a known
PSD Gram and must get it back.
"""

import math

import numpy as np
import pytest

from lpvjump.polyalg import Box, Poly, PolyMatrix, StructuralError, VarSet, monomials_up_to
from lpvjump.sdpsolve import SdpOptions, SdpStatus, check_solution, solve
from lpvjump.sosprog import (
    CompileError,
    LinExpr,
    LinPoly,
    LinPolyMatrix,
    SemialgebraicSet,
    SosProgram,
    gram_factor,
    lin_block,
)

VS_X = VarSet(["x"])
X = Poly.variable(VS_X, "x")


def expand_gram(G, basis, varset, n):
    nb = len(basis)
    entries = []
    for i in range(n):
        for j in range(n):
            terms = {}
            for a, ma in enumerate(basis):
                for b, mb in enumerate(basis):
                    mono = tuple(p + q for p, q in zip(ma, mb))
                    terms[mono] = terms.get(mono, 0.0) + G[i * nb + a, j * nb + b]
            entries.append(Poly(varset, terms))
    return PolyMatrix(n, n, varset, entries)


class TestDeclarations:
    @pytest.mark.parametrize("n,deg,nvars", [(2, 2, 1), (3, 2, 2), (1, 4, 1), (4, 0, 3)])
    def test_symmetric_handle_count(self, n, deg, nvars):
        vs = VarSet([f"v{i}" for i in range(nvars)])
        prog = SosProgram()
        P = prog.declare_poly_matrix("P", n, vs, deg)
        want = n * (n + 1) // 2 * math.comb(nvars + deg, deg)
        assert P.num_handles == want
        assert prog.num_handles == want

    def test_rectangular_handle_count(self):
        vs = VarSet(["x"])
        prog = SosProgram()
        U = prog.declare_poly_matrix("U", 2, vs, 3, cols=4, symmetric=False)
        assert U.num_handles == 2 * 4 * math.comb(1 + 3, 3)

    def test_symmetric_expr_mirrors_entries(self):
        prog = SosProgram()
        P = prog.declare_poly_matrix("P", 2, VS_X, 1)
        E = P.expr()
        assert E.entry(0, 1).terms == E.entry(1, 0).terms

    def test_duplicate_name_rejected(self):
        prog = SosProgram()
        prog.declare_poly_matrix("P", 2, VS_X, 1)
        with pytest.raises(StructuralError):
            prog.declare_poly_matrix("P", 2, VS_X, 1)


class TestScalarSosFeasibility:
    def test_perfect_square_feasible(self):
        prog = SosProgram()
        prog.add_sos_matrix_constraint(PolyMatrix.from_rows([[(X - 1) ** 2]], VS_X, symmetric=True), "sq")
        sol = solve(prog.compile().problem)
        assert sol.status is SdpStatus.OPTIMAL

    def test_linear_monomial_infeasible(self):
        # x takes negative values, so it cannot be SOS; the compiler still
        # produces a (correctly infeasible) SDP
        prog = SosProgram()
        prog.add_sos_matrix_constraint(PolyMatrix.from_rows([[X]], VS_X, symmetric=True), "lin")
        sol = solve(prog.compile().problem)
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE

    def test_negative_minimum_infeasible(self):
        # x^2 - 2x + 0.5 has minimum -0.5
        prog = SosProgram()
        prog.add_sos_matrix_constraint(
            PolyMatrix.from_rows([[X * X - 2 * X + 0.5]], VS_X, symmetric=True), "neg")
        sol = solve(prog.compile().problem)
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE

    def test_motzkin_infeasible(self):
        # Motzkin polynomial: nonnegative but not SOS
        vs = VarSet(["x", "y"])
        x, y = Poly.variable(vs, "x"), Poly.variable(vs, "y")
        motzkin = x**4 * y**2 + x**2 * y**4 - 3 * x**2 * y**2 + 1
        prog = SosProgram()
        prog.add_sos_matrix_constraint(PolyMatrix.from_rows([[motzkin]], vs, symmetric=True), "motzkin")
        sol = solve(prog.compile().problem)
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE

    def test_constant_identity_trivial(self):
        prog = SosProgram()
        prog.add_sos_matrix_constraint(PolyMatrix.identity(3, VS_X), "id")
        sol = solve(prog.compile().problem)
        assert sol.status is SdpStatus.OPTIMAL


class TestMatrixSos:
    def test_psd_matrix_poly_feasible(self):
        # [[x^2+1, x], [x, 1]] = [x 1]^T [x 1] + e1 e1^T
        M = PolyMatrix.from_rows([[X * X + 1, X], [X, Poly.constant(VS_X, 1.0)]], VS_X, symmetric=True)
        prog = SosProgram()
        prog.add_sos_matrix_constraint(M, "m")
        comp = prog.compile()
        sol = solve(comp.problem)
        assert sol.status is SdpStatus.OPTIMAL
        rec = comp.recover(sol)
        G, basis, vs, n = rec.gram_matrix("m")
        assert np.linalg.eigvalsh(G).min() >= -1e-9
        back = rec.sos_expansion("m")
        for i in range(2):
            for j in range(2):
                diff = back.entry(i, j) - M.entry(i, j)
                assert all(abs(c) < 1e-7 for c in diff.terms.values())

    def test_indefinite_matrix_poly_infeasible(self):
        # [[1, x], [x, 1 - x^2]]: det = 1 - x^2 - x^4 < 0 for |x| large
        M = PolyMatrix.from_rows([[Poly.constant(VS_X, 1.0), X], [X, 1 - X * X]], VS_X, symmetric=True)
        prog = SosProgram()
        prog.add_sos_matrix_constraint(M, "bad")
        sol = solve(prog.compile().problem)
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE

    def test_asymmetric_rejected(self):
        M = PolyMatrix.from_rows([[X, X], [X * X, X]], VS_X)
        prog = SosProgram()
        prog.add_sos_matrix_constraint(M, "asym")
        with pytest.raises(CompileError):
            prog.compile()

    def test_nonsquare_rejected(self):
        M = PolyMatrix.zeros(2, 3, VS_X)
        prog = SosProgram()
        with pytest.raises(StructuralError):
            prog.add_sos_matrix_constraint(M, "rect")


class TestGramRoundTrip:
    @pytest.mark.parametrize("seed,n,deg", [(0, 1, 2), (1, 2, 1), (2, 2, 2), (3, 3, 1)])
    def test_roundtrip(self, seed, n, deg):
        rng = np.random.default_rng(seed)
        vs = VarSet(["x", "y"]) if seed % 2 else VS_X
        basis = monomials_up_to(vs, deg)
        nb = len(basis)
        Q = rng.standard_normal((n * nb, n * nb))
        G = Q @ Q.T + 0.2 * np.eye(n * nb)
        G /= np.abs(G).sum(axis=1).max()  # unit scale so the 1e-8 bound is absolute
        M = expand_gram(G, basis, vs, n)
        prog = SosProgram()
        prog.add_sos_matrix_constraint(M, "rt")
        comp = prog.compile()
        sol = solve(comp.problem)
        assert sol.status is SdpStatus.OPTIMAL
        rec = comp.recover(sol)
        back = rec.sos_expansion("rt")
        for i in range(n):
            for j in range(n):
                diff = back.entry(i, j) - M.entry(i, j)
                assert all(abs(c) < 1e-8 for c in diff.terms.values()), (i, j, diff.terms)

    def test_row_count_invariant(self):
        # one equality per (upper-triangle slot, product monomial)
        n, deg = 2, 1
        vs = VarSet(["x", "y"])
        basis = monomials_up_to(vs, deg)
        rng = np.random.default_rng(7)
        G = np.eye(n * len(basis)) + 0.1 * rng.standard_normal((n * len(basis),) * 2)
        G = 0.5 * (G + G.T)
        M = expand_gram(G, basis, vs, n)
        prog = SosProgram()
        prog.add_sos_matrix_constraint(M, "cnt")
        comp = prog.compile()
        want = n * (n + 1) // 2 * len(monomials_up_to(vs, 2 * deg))
        assert comp.equality_counts["cnt"] == want

    def test_gram_factor(self):
        rng = np.random.default_rng(3)
        Q = rng.standard_normal((5, 5))
        G = Q @ Q.T
        L = gram_factor(G)
        assert np.allclose(L.T @ L, G, atol=1e-8)
        with pytest.raises(StructuralError):
            gram_factor(np.diag([1.0, -1.0]))


class TestBasisPolicy:
    def test_custom_policy_used(self):
        # (x^2)^2: the even-part basis {1, x^2} suffices
        prog = SosProgram()
        prog.add_sos_matrix_constraint(PolyMatrix.from_rows([[X**4 + 1]], VS_X, symmetric=True), "quartic")

        def even_policy(varset, d, expr):
            return [m for m in monomials_up_to(varset, d) if sum(m) % 2 == 0]

        comp = prog.compile(basis_policy=even_policy)
        gi = comp.gram_infos[0]
        assert gi["basis"] == [(0,), (2,)]
        sol = solve(comp.problem)
        assert sol.status is SdpStatus.OPTIMAL

    def test_policy_without_coverage_errors(self):
        prog = SosProgram()
        prog.add_sos_matrix_constraint(PolyMatrix.from_rows([[X**2 + X + 1]], VS_X, symmetric=True), "needs_x")

        def even_policy(varset, d, expr):
            return [m for m in monomials_up_to(varset, d) if sum(m) % 2 == 0]

        with pytest.raises(CompileError, match="no valid basis"):
            prog.compile(basis_policy=even_policy)


class TestEqualitiesAndObjective:
    def test_nonneg_scalar_minimization(self):
        # min t s.t. x^2 - 2x + t SOS; optimum t = 1
        prog = SosProgram()
        t = prog.declare_scalar("t", nonneg=True)
        expr = LinPolyMatrix.from_polymatrix(
            PolyMatrix.from_rows([[X * X - 2 * X]], VS_X)) + LinPolyMatrix.identity_scaled(1, VS_X, t)
        prog.add_sos_matrix_constraint(expr, "shifted")
        prog.set_objective(t)
        comp = prog.compile()
        sol = solve(comp.problem)
        assert sol.status is SdpStatus.OPTIMAL
        rec = comp.recover(sol)
        assert rec.objective_value == pytest.approx(1.0, abs=1e-6)

    def test_free_handle_equality(self):
        prog = SosProgram()
        P = prog.declare_poly_matrix("P", 1, VS_X, 0)
        e = P.expr().entry(0, 0).terms[(0,)]
        prog.add_equality(e - LinExpr(-2.5), "pin")
        prog.add_sos_matrix_constraint(PolyMatrix.identity(1, VS_X), "dummy")
        comp = prog.compile()
        sol = solve(comp.problem)
        assert sol.status is SdpStatus.OPTIMAL
        rec = comp.recover(sol)
        assert rec.decisions["P"].entry(0, 0).constant_value() == pytest.approx(-2.5, abs=1e-6)

    def test_integral_zero_linear(self):
        # scalar z0 + z1*theta on [0,1]: one row z0 + z1/2 = 0
        vs = VarSet(["theta"])
        prog = SosProgram()
        Z = prog.declare_poly_matrix("Z", 1, vs, 1)
        prog.add_integral_zero_constraint(Z, ["theta"], Box({"theta": (0.0, 1.0)}), "izero")
        prog.add_sos_matrix_constraint(PolyMatrix.identity(1, vs), "dummy")
        comp = prog.compile()
        assert comp.equality_counts.get("izero[0,0]:()") == 1
        sol = solve(comp.problem)
        rec = comp.recover(sol)
        z = rec.decisions["Z"].entry(0, 0)
        z0 = z.terms.get((0,), 0.0)
        z1 = z.terms.get((1,), 0.0)
        assert z0 + 0.5 * z1 == pytest.approx(0.0, abs=1e-7)

    def test_integral_zero_vacuous(self):
        # c*(2 theta - hi) on [0, hi] integrates to zero for every c: no rows
        hi = 5.0
        vs = VarSet(["theta"])
        th = Poly.variable(vs, "theta")
        prog = SosProgram()
        C = prog.declare_poly_matrix("C", 1, vs, 0)
        expr = C.expr().mul_poly(2 * th - hi)
        prog.add_integral_zero_constraint(expr, ["theta"], Box({"theta": (0.0, hi)}), "vac")
        prog.add_sos_matrix_constraint(PolyMatrix.identity(1, vs), "dummy")
        comp = prog.compile()
        assert not any(k.startswith("vac") for k in comp.equality_counts)

    def test_integral_zero_statically_inconsistent(self):
        # integral of the constant 1 over [0,1] is 1 != 0: infeasible
        vs = VarSet(["theta"])
        prog = SosProgram()
        ones = LinPolyMatrix.from_polymatrix(PolyMatrix.identity(1, vs))
        prog.add_integral_zero_constraint(ones, ["theta"], Box({"theta": (0.0, 1.0)}), "bad")
        prog.add_sos_matrix_constraint(PolyMatrix.identity(1, vs), "dummy")
        sol = solve(prog.compile().problem)
        assert sol.status is SdpStatus.PRIMAL_INFEASIBLE

    def test_no_constraints_rejected(self):
        with pytest.raises(CompileError):
            SosProgram().compile()


class TestPutinarCertificate:
    def test_positivity_on_box_via_multiplier(self):
        # certify P(x) >= x on [0,1] with P = decision deg 2, using
        # P - x - mult * x(1-x) SOS, mult SOS
        vs = VS_X
        g = Box({"x": (0.0, 1.0)}).indicator_poly(vs)
        prog = SosProgram()
        P = prog.declare_poly_matrix("P", 1, vs, 2)
        Gm = prog.declare_poly_matrix("Gm", 1, vs, 2)
        prog.add_sos_matrix_constraint(Gm.expr(), "mult_sos")
        expr = P.expr() - LinPolyMatrix.from_polymatrix(PolyMatrix.from_rows([[X]], vs)) \
            - Gm.expr().mul_poly(g)
        prog.add_sos_matrix_constraint(expr, "dominates")
        comp = prog.compile()
        sol = solve(comp.problem)
        assert sol.status is SdpStatus.OPTIMAL
        rec = comp.recover(sol)
        Pv = rec.decisions["P"].entry(0, 0)
        for x in np.linspace(0, 1, 21):
            assert Pv.eval({"x": x}) >= x - 1e-6

    def test_solution_satisfies_equalities(self):
        # solver-returned solution meets the coefficient equalities
        prog = SosProgram()
        P = prog.declare_poly_matrix("P", 2, VS_X, 2)
        expr = P.expr() - LinPolyMatrix.from_polymatrix(PolyMatrix.identity(2, VS_X))
        prog.add_sos_matrix_constraint(expr, "psd_minus_eye")
        prog.add_sos_matrix_constraint(P.expr(), "psd")
        comp = prog.compile()
        sol = solve(comp.problem)
        assert sol.status is SdpStatus.OPTIMAL
        rep = check_solution(comp.problem, sol)
        assert rep["ok"], rep


class TestSemialgebraicSet:
    def test_box_constraint_poly(self):
        box = Box({"x": (0.0, 2.0), "y": (-1.0, 1.0)})
        dom = SemialgebraicSet.from_box(box)
        polys = dom.constraint_polys()
        assert len(polys) == 1
        g = polys[0]
        assert g.eval({"x": 1.0, "y": 0.0}) > 0
        assert g.eval({"x": 2.5, "y": 0.0}) < 0

    def test_extra_constraints_filter_grid(self):
        vs = VarSet(["x"])
        box = Box({"x": (-1.0, 1.0)})
        dom = SemialgebraicSet(box, vs, extra=[Poly.variable(vs, "x")])
        pts = dom.grid(5)
        assert all(p["x"] >= 0 for p in pts)

    def test_renamed(self):
        dom = SemialgebraicSet.from_box(Box({"rho": (0.0, 5.0)}))
        dom2 = dom.renamed({"rho": "theta"})
        assert dom2.box.names == ("theta",)


class TestLinBlock:
    def test_block_assembly(self):
        vs = VS_X
        A = LinPolyMatrix.from_polymatrix(PolyMatrix.identity(2, vs))
        B = LinPolyMatrix.from_polymatrix(PolyMatrix.from_rows([[X], [X * X]], vs))
        M = lin_block([[A, B], [None, LinPolyMatrix.from_polymatrix(PolyMatrix.identity(1, vs))]], vs)
        assert (M.rows, M.cols) == (3, 3)
        hv = np.zeros(0)
        got = M.collapse(hv).eval_at({"x": 2.0})
        want = np.array([[1, 0, 2], [0, 1, 4], [0, 0, 1]], dtype=float)
        assert np.allclose(got, want)

    def test_inconsistent_sizes_rejected(self):
        vs = VS_X
        A = LinPolyMatrix.from_polymatrix(PolyMatrix.identity(2, vs))
        B = LinPolyMatrix.from_polymatrix(PolyMatrix.identity(3, vs))
        with pytest.raises(StructuralError):
            lin_block([[A, B]], vs)
