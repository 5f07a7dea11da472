"""Sum-of-squares programs over polynomial decision variables, compiled to SDP.

A program declares polynomial matrix decision variables (each scalar
coefficient is a solver handle), poses SOS matrix constraints on expressions
that are affine in the handles, linear coefficient equalities (notably the
integral-zero constraint used by the synthesis theorem), and an optional
linear objective.  Compilation parameterizes every SOS constraint by a dense
Gram matrix over the full monomial basis of degree ceil(maxdeg/2) and emits
one scalar equality per (matrix slot, monomial) pair; handles become LP-cone
coordinates of the SDP (free handles as u+ - u- splits, declared-nonnegative
handles as a single coordinate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .polyalg import (
    COEFF_EPS,
    MAX_DEGREE,
    Box,
    Poly,
    PolyMatrix,
    StructuralError,
    VarSet,
    monomials_up_to,
)
from .sdpsolve import SdpProblem, SdpSolution

# Default floors used when turning strict matrix inequalities into SOS
# constraints: M >= EPS_POS*I for positivity, M <= -EPS_STRICT*I for strictness.
EPS_POS = 1e-4
EPS_STRICT = 1e-6


class CompileError(StructuralError):
    """Raised when a program cannot be turned into a well-formed SDP."""


# ---- affine expressions in solver handles ------------------------------------


class LinExpr:
    """Affine function of handles: const + sum coef[h] * u_h."""

    __slots__ = ("const", "coef")

    def __init__(self, const: float = 0.0, coef: Mapping[int, float] | None = None):
        self.const = float(const)
        self.coef = {int(h): float(c) for h, c in (coef or {}).items() if c != 0.0}

    @classmethod
    def for_handle(cls, handle: int, scale: float = 1.0) -> "LinExpr":
        return cls(0.0, {handle: scale})

    def is_zero(self) -> bool:
        return self.const == 0.0 and not self.coef

    def is_const(self) -> bool:
        return not self.coef

    def __add__(self, other) -> "LinExpr":
        if isinstance(other, (int, float)):
            return LinExpr(self.const + other, self.coef)
        coef = dict(self.coef)
        for h, c in other.coef.items():
            coef[h] = coef.get(h, 0.0) + c
        out = LinExpr(self.const + other.const, {})
        out.coef = {h: c for h, c in coef.items() if abs(c) >= COEFF_EPS}
        return out

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return self.scale(-1.0)

    def __sub__(self, other) -> "LinExpr":
        if isinstance(other, (int, float)):
            other = LinExpr(other)
        return self + (-other)

    def scale(self, c: float) -> "LinExpr":
        c = float(c)
        out = LinExpr(self.const * c, {})
        out.coef = {h: v * c for h, v in self.coef.items() if abs(v * c) >= COEFF_EPS}
        return out

    def eval(self, handle_values: np.ndarray) -> float:
        return self.const + sum(c * handle_values[h] for h, c in self.coef.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinExpr):
            return NotImplemented
        return self.const == other.const and self.coef == other.coef

    def __repr__(self) -> str:
        parts = [f"{self.const:g}"] if self.const or not self.coef else []
        parts += [f"{c:+g}*u{h}" for h, c in sorted(self.coef.items())]
        return "LinExpr(" + " ".join(parts) + ")"


class LinPoly:
    """Polynomial whose coefficients are LinExpr (affine in handles)."""

    __slots__ = ("varset", "terms")

    def __init__(self, varset: VarSet, terms: Mapping[tuple, LinExpr] | None = None):
        self.varset = varset
        self.terms = {m: e for m, e in (terms or {}).items() if not e.is_zero()}

    @classmethod
    def from_poly(cls, p: Poly) -> "LinPoly":
        return cls(p.varset, {m: LinExpr(c) for m, c in p.terms.items()})

    @classmethod
    def zero(cls, varset: VarSet) -> "LinPoly":
        return cls(varset, {})

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> float:
        if not self.terms:
            return float("-inf")
        return float(max(sum(m) for m in self.terms))

    def __add__(self, other: "LinPoly") -> "LinPoly":
        if self.varset != other.varset:
            raise StructuralError("varset mismatch in LinPoly sum")
        terms = dict(self.terms)
        for m, e in other.terms.items():
            terms[m] = (terms[m] + e) if m in terms else e
        return LinPoly(self.varset, terms)

    def __neg__(self) -> "LinPoly":
        return self.scale(-1.0)

    def __sub__(self, other: "LinPoly") -> "LinPoly":
        return self + (-other)

    def scale(self, c: float) -> "LinPoly":
        return LinPoly(self.varset, {m: e.scale(c) for m, e in self.terms.items()})

    def mul_poly(self, p: Poly) -> "LinPoly":
        if self.varset != p.varset:
            raise StructuralError("varset mismatch in LinPoly * Poly")
        terms: dict[tuple, LinExpr] = {}
        for m1, e in self.terms.items():
            for m2, c in p.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                contrib = e.scale(c)
                terms[m] = (terms[m] + contrib) if m in terms else contrib
        out = LinPoly(self.varset, terms)
        if out.terms and max(sum(m) for m in out.terms) > MAX_DEGREE:
            raise StructuralError(f"degree cap {MAX_DEGREE} exceeded")
        return out

    def rename_vars(self, mapping: Mapping[str, str]) -> "LinPoly":
        new_names = [mapping.get(nm, nm) for nm in self.varset.names]
        return LinPoly(VarSet(new_names), dict(self.terms))

    def with_varset(self, varset: VarSet) -> "LinPoly":
        pos = {nm: k for k, nm in enumerate(varset.names)}
        terms: dict[tuple, LinExpr] = {}
        for m, e in self.terms.items():
            key = [0] * len(varset)
            for nm, ex in zip(self.varset.names, m):
                if ex == 0:
                    continue
                if nm not in pos:
                    raise StructuralError(f"variable {nm!r} occurs but is absent from target varset")
                key[pos[nm]] = ex
            key = tuple(key)
            terms[key] = (terms[key] + e) if key in terms else e
        return LinPoly(varset, terms)

    def integrate_box(self, names: Sequence[str], box: Box) -> "LinPoly":
        names = list(names)
        for nm in names:
            self.varset.index(nm)
        ivals = [(self.varset.index(nm),) + box.interval(nm) for nm in names]
        keep = [nm for nm in self.varset.names if nm not in names]
        new_vs = VarSet(keep)
        keep_idx = [self.varset.index(nm) for nm in keep]
        terms: dict[tuple, LinExpr] = {}
        for m, e in self.terms.items():
            f = 1.0
            for i, lo, hi in ivals:
                ex = m[i]
                f *= (hi ** (ex + 1) - lo ** (ex + 1)) / (ex + 1)
            key = tuple(m[i] for i in keep_idx)
            contrib = e.scale(f)
            terms[key] = (terms[key] + contrib) if key in terms else contrib
        return LinPoly(new_vs, terms)

    def collapse(self, handle_values: np.ndarray) -> Poly:
        return Poly(self.varset, {m: e.eval(handle_values) for m, e in self.terms.items()})

    def __repr__(self) -> str:
        return f"LinPoly({len(self.terms)} terms over {self.varset.names})"


class LinPolyMatrix:
    """Matrix of LinPoly entries over one varset."""

    __slots__ = ("rows", "cols", "varset", "entries", "symmetric")

    def __init__(self, rows: int, cols: int, varset: VarSet, entries: Sequence[LinPoly],
                 symmetric: bool = False):
        entries = list(entries)
        if len(entries) != rows * cols:
            raise StructuralError(f"expected {rows * cols} entries, got {len(entries)}")
        for e in entries:
            if e.varset != varset:
                raise StructuralError("entries must share the matrix varset")
        self.rows, self.cols, self.varset = rows, cols, varset
        self.entries = entries
        self.symmetric = bool(symmetric)

    @classmethod
    def from_polymatrix(cls, M: PolyMatrix) -> "LinPolyMatrix":
        return cls(M.rows, M.cols, M.varset, [LinPoly.from_poly(p) for p in M.entries],
                   symmetric=M.symmetric)

    @classmethod
    def zeros(cls, rows: int, cols: int, varset: VarSet) -> "LinPolyMatrix":
        z = LinPoly.zero(varset)
        return cls(rows, cols, varset, [z] * (rows * cols))

    @classmethod
    def identity_scaled(cls, n: int, varset: VarSet, scale) -> "LinPolyMatrix":
        """scale may be a float, Poly or LinExpr; placed on the diagonal."""
        zero_mono = (0,) * len(varset)
        if isinstance(scale, LinExpr):
            diag = LinPoly(varset, {zero_mono: scale})
        elif isinstance(scale, Poly):
            diag = LinPoly.from_poly(scale.with_varset(varset))
        else:
            diag = LinPoly(varset, {zero_mono: LinExpr(float(scale))})
        z = LinPoly.zero(varset)
        entries = [diag if i == j else z for i in range(n) for j in range(n)]
        return cls(n, n, varset, entries, symmetric=True)

    def entry(self, i: int, j: int) -> LinPoly:
        return self.entries[i * self.cols + j]

    def __add__(self, other: "LinPolyMatrix") -> "LinPolyMatrix":
        if not isinstance(other, LinPolyMatrix):
            other = LinPolyMatrix.from_polymatrix(other)
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise StructuralError("shape mismatch in sum")
        return LinPolyMatrix(self.rows, self.cols, self.varset,
                             [a + b for a, b in zip(self.entries, other.entries)],
                             symmetric=self.symmetric and other.symmetric)

    def __sub__(self, other) -> "LinPolyMatrix":
        if not isinstance(other, LinPolyMatrix):
            other = LinPolyMatrix.from_polymatrix(other)
        return self + other.scale(-1.0)

    def __neg__(self) -> "LinPolyMatrix":
        return self.scale(-1.0)

    def scale(self, c: float) -> "LinPolyMatrix":
        return LinPolyMatrix(self.rows, self.cols, self.varset,
                             [e.scale(c) for e in self.entries], symmetric=self.symmetric)

    def mul_poly(self, p: Poly) -> "LinPolyMatrix":
        return LinPolyMatrix(self.rows, self.cols, self.varset,
                             [e.mul_poly(p) for e in self.entries], symmetric=self.symmetric)

    def matmul_right(self, M: PolyMatrix) -> "LinPolyMatrix":
        """self @ M with M handle-free (keeps affinity in handles)."""
        if self.cols != M.rows:
            raise StructuralError("shape mismatch in product")
        if self.varset != M.varset:
            raise StructuralError("varset mismatch in product")
        entries = []
        for i in range(self.rows):
            for j in range(M.cols):
                acc = LinPoly.zero(self.varset)
                for k in range(self.cols):
                    acc = acc + self.entry(i, k).mul_poly(M.entry(k, j))
                entries.append(acc)
        return LinPolyMatrix(self.rows, M.cols, self.varset, entries)

    def matmul_left(self, M: PolyMatrix) -> "LinPolyMatrix":
        """M @ self with M handle-free."""
        if M.cols != self.rows:
            raise StructuralError("shape mismatch in product")
        if self.varset != M.varset:
            raise StructuralError("varset mismatch in product")
        entries = []
        for i in range(M.rows):
            for j in range(self.cols):
                acc = LinPoly.zero(self.varset)
                for k in range(M.cols):
                    acc = acc + self.entry(k, j).mul_poly(M.entry(i, k))
                entries.append(acc)
        return LinPolyMatrix(M.rows, self.cols, self.varset, entries)

    def transpose(self) -> "LinPolyMatrix":
        entries = [self.entry(j, i) for i in range(self.cols) for j in range(self.rows)]
        return LinPolyMatrix(self.cols, self.rows, self.varset, entries, symmetric=self.symmetric)

    def he(self) -> "LinPolyMatrix":
        """M + M^T, flagged symmetric."""
        if self.rows != self.cols:
            raise StructuralError("he() needs a square matrix")
        out = self + self.transpose()
        out.symmetric = True
        return out

    def rename_vars(self, mapping: Mapping[str, str]) -> "LinPolyMatrix":
        return LinPolyMatrix(self.rows, self.cols, VarSet([mapping.get(nm, nm) for nm in self.varset.names]),
                             [e.rename_vars(mapping) for e in self.entries], symmetric=self.symmetric)

    def with_varset(self, varset: VarSet) -> "LinPolyMatrix":
        return LinPolyMatrix(self.rows, self.cols, varset,
                             [e.with_varset(varset) for e in self.entries], symmetric=self.symmetric)

    def integrate_box(self, names: Sequence[str], box: Box) -> "LinPolyMatrix":
        entries = [e.integrate_box(names, box) for e in self.entries]
        vs = entries[0].varset if entries else self.varset
        return LinPolyMatrix(self.rows, self.cols, vs, entries, symmetric=self.symmetric)

    def collapse(self, handle_values: np.ndarray) -> PolyMatrix:
        return PolyMatrix(self.rows, self.cols, self.varset,
                          [e.collapse(handle_values) for e in self.entries])

    def max_degree(self) -> float:
        degs = [e.degree() for e in self.entries]
        return max(degs) if degs else float("-inf")


def lin_block(grid: Sequence[Sequence], varset: VarSet) -> LinPolyMatrix:
    """Assemble a block matrix from LinPolyMatrix/PolyMatrix cells (None = zeros).

    Every non-None cell must already be over `varset`; row/column sizes are
    inferred and must be consistent.
    """
    nbr = len(grid)
    nbc = len(grid[0])
    cells: list[list] = []
    for row in grid:
        if len(row) != nbc:
            raise StructuralError("ragged block grid")
        cells.append([LinPolyMatrix.from_polymatrix(c) if isinstance(c, PolyMatrix) else c for c in row])
    row_sizes = [None] * nbr
    col_sizes = [None] * nbc
    for i in range(nbr):
        for j in range(nbc):
            c = cells[i][j]
            if c is None:
                continue
            if c.varset != varset:
                raise StructuralError("block cell varset mismatch")
            if row_sizes[i] is None:
                row_sizes[i] = c.rows
            elif row_sizes[i] != c.rows:
                raise StructuralError(f"inconsistent row size in block row {i}")
            if col_sizes[j] is None:
                col_sizes[j] = c.cols
            elif col_sizes[j] != c.cols:
                raise StructuralError(f"inconsistent column size in block column {j}")
    if any(s is None for s in row_sizes) or any(s is None for s in col_sizes):
        raise StructuralError("block grid has a fully empty row or column")
    total_r, total_c = sum(row_sizes), sum(col_sizes)
    z = LinPoly.zero(varset)
    entries = [z] * (total_r * total_c)
    r0 = 0
    for i in range(nbr):
        c0 = 0
        for j in range(nbc):
            c = cells[i][j]
            if c is not None:
                for a in range(c.rows):
                    for bcol in range(c.cols):
                        entries[(r0 + a) * total_c + (c0 + bcol)] = c.entry(a, bcol)
            c0 += col_sizes[j]
        r0 += row_sizes[i]
    return LinPolyMatrix(total_r, total_c, varset, entries)


# ---- semialgebraic domains ---------------------------------------------------


class SemialgebraicSet:
    """Parameter domain: a box plus optional extra polynomial inequalities g >= 0.

    The box contributes the single product polynomial
    prod_k (x_k - lo_k)(hi_k - x_k) to the constraint list.
    """

    def __init__(self, box: Box, varset: VarSet, extra: Sequence[Poly] = ()):
        if set(box.names) != set(varset.names):
            raise StructuralError("box variables must match the varset")
        for g in extra:
            if g.varset != varset:
                raise StructuralError("extra constraints must share the varset")
        self.box = box
        self.varset = varset
        self.extra = list(extra)

    @classmethod
    def from_box(cls, box: Box) -> "SemialgebraicSet":
        return cls(box, VarSet(box.names))

    def constraint_polys(self) -> list[Poly]:
        return [self.box.indicator_poly(self.varset)] + self.extra

    def grid(self, density: int) -> list[dict]:
        pts = self.box.grid(density)
        if not self.extra:
            return pts
        return [pt for pt in pts if all(g.eval(pt) >= 0.0 for g in self.extra)]

    def renamed(self, mapping: Mapping[str, str]) -> "SemialgebraicSet":
        vs = VarSet([mapping.get(nm, nm) for nm in self.varset.names])
        return SemialgebraicSet(self.box.renamed(mapping), vs,
                                [g.rename_vars(mapping) for g in self.extra])

    def __repr__(self) -> str:
        return f"SemialgebraicSet({self.box!r}, extra={len(self.extra)})"


# ---- decision matrices and programs -------------------------------------------


class DecisionPolyMatrix:
    """Declared polynomial matrix variable; every coefficient is one handle."""

    def __init__(self, name: str, rows: int, cols: int, varset: VarSet, degree: int,
                 symmetric: bool, handle_table: dict):
        self.name = name
        self.rows = rows
        self.cols = cols
        self.varset = varset
        self.degree = degree
        self.symmetric = symmetric
        self.handle_table = handle_table  # (i, j, mono) -> handle, i <= j if symmetric

    @property
    def num_handles(self) -> int:
        return len(self.handle_table)

    def expr(self) -> LinPolyMatrix:
        entries = []
        for i in range(self.rows):
            for j in range(self.cols):
                key_i, key_j = (min(i, j), max(i, j)) if self.symmetric else (i, j)
                terms = {}
                for (a, b, mono), h in self.handle_table.items():
                    if (a, b) == (key_i, key_j):
                        terms[mono] = LinExpr.for_handle(h)
                entries.append(LinPoly(self.varset, terms))
        return LinPolyMatrix(self.rows, self.cols, self.varset, entries, symmetric=self.symmetric)


@dataclass
class _SosConstraint:
    label: str
    expr: LinPolyMatrix


@dataclass
class _Equality:
    label: str
    expr: LinExpr


class SosProgram:
    """Container of declarations, constraints and objective; compiles to SdpProblem."""

    def __init__(self):
        self._handle_meta: list[dict] = []
        self.decisions: dict[str, DecisionPolyMatrix] = {}
        self.sos_constraints: list[_SosConstraint] = []
        self.equalities: list[_Equality] = []
        self.objective: LinExpr | None = None

    # ---- declarations --------------------------------------------------------

    def _new_handle(self, label: str, nonneg: bool) -> int:
        self._handle_meta.append({"label": label, "nonneg": nonneg})
        return len(self._handle_meta) - 1

    @property
    def num_handles(self) -> int:
        return len(self._handle_meta)

    def declare_poly_matrix(self, name: str, rows: int, varset: VarSet, degree: int,
                            cols: int | None = None, symmetric: bool = True) -> DecisionPolyMatrix:
        """Declare a polynomial matrix variable of entries with total degree <= degree."""
        if name in self.decisions:
            raise StructuralError(f"decision matrix {name!r} already declared")
        cols = rows if cols is None else cols
        if symmetric and rows != cols:
            raise StructuralError("symmetric decision matrix must be square")
        if degree < 0:
            raise StructuralError("degree must be >= 0")
        monos = monomials_up_to(varset, degree)
        table = {}
        for i in range(rows):
            jrange = range(i, cols) if symmetric else range(cols)
            for j in jrange:
                for mono in monos:
                    table[(i, j, mono)] = self._new_handle(f"{name}[{i},{j}]:{mono}", nonneg=False)
        dm = DecisionPolyMatrix(name, rows, cols, varset, degree, symmetric, table)
        self.decisions[name] = dm
        return dm

    def declare_scalar(self, name: str, nonneg: bool = False) -> LinExpr:
        """Declare a scalar decision handle; returns it wrapped as a LinExpr."""
        if name in self.decisions:
            raise StructuralError(f"{name!r} already declared")
        h = self._new_handle(name, nonneg=nonneg)
        self.decisions[name] = h  # reserve the name
        return LinExpr.for_handle(h)

    # ---- constraints -----------------------------------------------------------

    def add_sos_matrix_constraint(self, expr: LinPolyMatrix | PolyMatrix, label: str) -> None:
        """Require expr(x) to be an SOS matrix (hence PSD for all x)."""
        if isinstance(expr, PolyMatrix):
            expr = LinPolyMatrix.from_polymatrix(expr)
        if expr.rows != expr.cols:
            raise StructuralError(f"SOS constraint {label!r}: matrix must be square")
        self.sos_constraints.append(_SosConstraint(label, expr))

    def add_equality(self, expr: LinExpr, label: str) -> None:
        """Require an affine handle expression to equal zero."""
        self.equalities.append(_Equality(label, expr))

    def add_integral_zero_constraint(self, mat, names: Sequence[str], box: Box, label: str) -> None:
        """Require the definite box integral of a matrix to vanish identically.

        Emits one equality per (upper-triangle entry, surviving monomial);
        rows whose coefficients all cancel impose nothing and are dropped.
        """
        if isinstance(mat, DecisionPolyMatrix):
            mat = mat.expr()
        integ = mat.integrate_box(names, box)
        for i in range(integ.rows):
            jstart = i if (mat.symmetric and integ.rows == integ.cols) else 0
            for j in range(jstart, integ.cols):
                lp = integ.entry(i, j)
                for mono, e in sorted(lp.terms.items(), key=lambda t: (sum(t[0]), t[0])):
                    if e.is_zero():
                        continue
                    if e.is_const():
                        if abs(e.const) >= 1e-12:
                            # statically inconsistent; keep the row, the SDP
                            # will certify infeasibility
                            self.equalities.append(_Equality(f"{label}[{i},{j}]:{mono}", e))
                        continue
                    self.equalities.append(_Equality(f"{label}[{i},{j}]:{mono}", e))

    def set_objective(self, expr: LinExpr) -> None:
        """Minimize an affine function of the handles."""
        self.objective = expr

    # ---- compilation ------------------------------------------------------------

    def compile(self, basis_policy=None, trace_regularization: float = 1e-8,
                split_regularization: float = 1e-8) -> "CompiledSdp":
        """Build the SDP.  basis_policy(varset, half_degree, expr) may return a
        custom monomial list; the default is the full basis of degree
        ceil(maxdeg/2)."""
        # LP layout for handles
        lp_layout: list[tuple] = []
        lp_size = 0
        for h, meta in enumerate(self._handle_meta):
            if meta["nonneg"]:
                lp_layout.append(("nonneg", lp_size))
                lp_size += 1
            else:
                lp_layout.append(("free", lp_size, lp_size + 1))
                lp_size += 2

        gram_infos = []
        rows: list[dict] = []  # {"gram": (block, mat) | None, "lp": {pos: coef}, "b": float, "label": str}
        equality_counts: dict[str, int] = {}

        def lp_coeffs(e: LinExpr) -> dict[int, float]:
            out: dict[int, float] = {}
            for h, c in e.coef.items():
                lay = lp_layout[h]
                if lay[0] == "nonneg":
                    out[lay[1]] = out.get(lay[1], 0.0) - c
                else:
                    out[lay[1]] = out.get(lay[1], 0.0) - c
                    out[lay[2]] = out.get(lay[2], 0.0) + c
            return out

        for ci, con in enumerate(self.sos_constraints):
            M = con.expr
            n = M.rows
            # symbolic symmetry check
            for i in range(n):
                for j in range(i + 1, n):
                    d = M.entry(i, j) - M.entry(j, i)
                    if any(abs(e.const) > 1e-10 or any(abs(c) > 1e-10 for c in e.coef.values())
                           for e in d.terms.values()):
                        raise CompileError(f"SOS constraint {con.label!r}: expression is not symmetric")
            maxdeg = M.max_degree()
            d = 0 if maxdeg == float("-inf") else int(math.ceil(maxdeg / 2.0))
            varset = M.varset
            basis = list(basis_policy(varset, d, M)) if basis_policy else monomials_up_to(varset, d)
            nb = len(basis)
            # ordered product pairs per monomial
            pairs: dict[tuple, list] = {}
            for a, ma in enumerate(basis):
                for bidx, mb in enumerate(basis):
                    mono = tuple(x + y for x, y in zip(ma, mb))
                    pairs.setdefault(mono, []).append((a, bidx))
            # coverage check
            for i in range(n):
                for j in range(i, n):
                    for mono in M.entry(i, j).terms:
                        if mono not in pairs:
                            raise CompileError(
                                f"SOS constraint {con.label!r}: no valid basis, monomial {mono} "
                                f"is not a product of two basis monomials")
            gsize = n * nb
            count = 0
            for i in range(n):
                for j in range(i, n):
                    lp_entry = M.entry(i, j)
                    for mono in sorted(pairs, key=lambda m: (sum(m), m)):
                        A = np.zeros((gsize, gsize))
                        for a, bidx in pairs[mono]:
                            A[i * nb + a, j * nb + bidx] += 1.0
                        A = 0.5 * (A + A.T)
                        e = lp_entry.terms.get(mono, LinExpr())
                        rows.append({"gram": (ci, A), "lp": lp_coeffs(e), "b": e.const,
                                     "label": f"{con.label}[{i},{j}]:{mono}"})
                        count += 1
            equality_counts[con.label] = count
            gram_infos.append({"label": con.label, "n": n, "basis": basis, "varset": varset,
                               "size": gsize})

        for eq in self.equalities:
            rows.append({"gram": None, "lp": lp_coeffs(eq.expr), "b": eq.expr.const,
                         "label": eq.label})
            equality_counts[eq.label] = equality_counts.get(eq.label, 0) + 1

        if not rows:
            raise CompileError("program has no constraints")

        m = len(rows)
        sizes = [gi["size"] for gi in gram_infos]
        have_lp = lp_size > 0
        if have_lp:
            sizes.append(-lp_size)
        a_blocks = [np.zeros((m, s, s)) for s in sizes if s > 0]
        if have_lp:
            a_blocks.append(np.zeros((m, lp_size)))
        b = np.zeros(m)
        for k, row in enumerate(rows):
            b[k] = row["b"]
            if row["gram"] is not None:
                ci, A = row["gram"]
                a_blocks[ci][k] = A
            for pos, c in row["lp"].items():
                a_blocks[-1][k, pos] = c

        c_blocks = []
        if self.objective is None:
            c_blocks = [np.eye(gi["size"]) for gi in gram_infos]
            if have_lp:
                # a tiny uniform cost keeps split halves bounded: with zero
                # cost the split columns have no strictly feasible dual point
                # and the halves diverge along the central path
                c_blocks.append(np.full(lp_size, split_regularization))
        else:
            c_blocks = [trace_regularization * np.eye(gi["size"]) for gi in gram_infos]
            if have_lp:
                c_lp = np.full(lp_size, split_regularization)
                for h, c in self.objective.coef.items():
                    lay = lp_layout[h]
                    if lay[0] == "nonneg":
                        c_lp[lay[1]] += c
                    else:
                        c_lp[lay[1]] += c
                        c_lp[lay[2]] -= c
                c_blocks.append(c_lp)
            elif self.objective.coef:
                raise CompileError("objective references handles but program declares none")

        problem = SdpProblem(sizes, c_blocks, a_blocks, b)
        return CompiledSdp(problem=problem, program=self, lp_layout=lp_layout,
                           lp_block_index=len(sizes) - 1 if have_lp else None,
                           gram_infos=gram_infos, equality_counts=equality_counts,
                           row_labels=[r["label"] for r in rows])


@dataclass
class CompiledSdp:
    problem: SdpProblem
    program: SosProgram
    lp_layout: list
    lp_block_index: int | None
    gram_infos: list
    equality_counts: dict
    row_labels: list

    def recover(self, solution: SdpSolution) -> "SosSolution":
        """Extract handle values, decision polynomials and Gram factors."""
        hv = np.zeros(self.program.num_handles)
        if self.lp_block_index is not None and solution.x_blocks:
            lp = solution.x_blocks[self.lp_block_index]
            for h, lay in enumerate(self.lp_layout):
                hv[h] = lp[lay[1]] if lay[0] == "nonneg" else lp[lay[1]] - lp[lay[2]]
        grams = {}
        for ci, gi in enumerate(self.gram_infos):
            grams[gi["label"]] = (solution.x_blocks[ci] if solution.x_blocks else None, gi)
        decisions = {}
        for name, dm in self.program.decisions.items():
            if isinstance(dm, DecisionPolyMatrix):
                decisions[name] = dm.expr().collapse(hv)
        obj = self.program.objective.eval(hv) if self.program.objective is not None else None
        return SosSolution(status=solution.status, handle_values=hv, decisions=decisions,
                           grams=grams, objective_value=obj, sdp_solution=solution)


@dataclass
class SosSolution:
    status: object
    handle_values: np.ndarray
    decisions: dict
    grams: dict
    objective_value: float | None
    sdp_solution: SdpSolution

    def gram_matrix(self, label: str) -> tuple[np.ndarray, list, VarSet, int]:
        G, gi = self.grams[label]
        return G, gi["basis"], gi["varset"], gi["n"]

    def sos_expansion(self, label: str) -> PolyMatrix:
        """Expand the recovered Gram back to the certified polynomial matrix."""
        G, basis, varset, n = self.gram_matrix(label)
        nb = len(basis)
        entries = []
        for i in range(n):
            for j in range(n):
                terms: dict[tuple, float] = {}
                for a, ma in enumerate(basis):
                    for bidx, mb in enumerate(basis):
                        mono = tuple(x + y for x, y in zip(ma, mb))
                        terms[mono] = terms.get(mono, 0.0) + G[i * nb + a, j * nb + bidx]
                entries.append(Poly(varset, terms))
        return PolyMatrix(n, n, varset, entries)


def gram_factor(G: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """L with G ~ L^T L, eigenvalues clipped at 0; fails if G is indefinite."""
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    if w.min() < -max(tol, 1e-12 * max(abs(w.max()), 1.0)):
        raise StructuralError(f"Gram matrix is not PSD (min eig {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)).T
