"""Exact multivariate polynomial algebra over named variable sets.

Polynomials are stored as maps from dense exponent tuples to float
coefficients.  All arithmetic is exact up to float rounding; results are
canonicalized by dropping coefficients below COEFF_EPS so that repeated
add/mul chains do not accumulate structural noise.  Matrices of polynomials
share a single variable set across all entries.
"""

from __future__ import annotations

import itertools
import math
import re
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

COEFF_EPS = 1e-14
MAX_DEGREE = 64

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z_0-9]*$")


class StructuralError(ValueError):
    """Raised for shape, variable-set and format violations."""


class VarSet:
    """Immutable ordered set of variable names."""

    __slots__ = ("names", "_index")

    def __init__(self, names: Iterable[str]):
        names = tuple(names)
        for nm in names:
            if not _NAME_RE.match(nm):
                raise StructuralError(f"invalid variable name {nm!r}")
        if len(set(names)) != len(names):
            raise StructuralError(f"duplicate variable names in {names}")
        self.names = names
        self._index = {nm: k for k, nm in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise StructuralError(f"variable {name!r} not in varset {self.names}") from None

    def __eq__(self, other) -> bool:
        return isinstance(other, VarSet) and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"VarSet{self.names}"


def _check_same_varset(a: "Poly", b: "Poly") -> None:
    if a.varset != b.varset:
        raise StructuralError(f"varset mismatch: {a.varset} vs {b.varset}")


class Poly:
    """Polynomial with real coefficients over a VarSet.

    terms maps exponent tuples (one entry per variable, nonnegative ints)
    to nonzero coefficients.  The zero polynomial has an empty term map and
    degree -inf.
    """

    __slots__ = ("varset", "terms")

    def __init__(self, varset: VarSet, terms: Mapping[tuple, float]):
        self.varset = varset
        nv = len(varset)
        clean: dict[tuple, float] = {}
        for mono, c in terms.items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != nv:
                raise StructuralError(f"exponent tuple {mono} does not match varset of size {nv}")
            if any(e < 0 for e in mono):
                raise StructuralError(f"negative exponent in {mono}")
            c = float(c)
            if c != 0.0:
                clean[mono] = clean.get(mono, 0.0) + c
        self.terms = {m: c for m, c in clean.items() if c != 0.0}

    # ---- constructors -------------------------------------------------

    @classmethod
    def zero(cls, varset: VarSet) -> "Poly":
        return cls(varset, {})

    @classmethod
    def constant(cls, varset: VarSet, c: float) -> "Poly":
        return cls(varset, {(0,) * len(varset): float(c)})

    @classmethod
    def variable(cls, varset: VarSet, name: str) -> "Poly":
        k = varset.index(name)
        mono = tuple(1 if i == k else 0 for i in range(len(varset)))
        return cls(varset, {mono: 1.0})

    # ---- basic queries -------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> float:
        """Total degree; -inf for the zero polynomial."""
        if not self.terms:
            return float("-inf")
        return float(max(sum(m) for m in self.terms))

    def constant_value(self) -> float:
        """Value if the polynomial is constant, error otherwise."""
        if not self.terms:
            return 0.0
        zero = (0,) * len(self.varset)
        if set(self.terms) != {zero}:
            raise StructuralError("polynomial is not constant")
        return self.terms[zero]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.varset == other.varset and self.terms == other.terms

    def __hash__(self):
        return hash((self.varset, tuple(sorted(self.terms.items()))))

    # ---- arithmetic ----------------------------------------------------

    def _canon(self, terms: dict) -> "Poly":
        out = {m: c for m, c in terms.items() if abs(c) >= COEFF_EPS}
        p = Poly.__new__(Poly)
        p.varset = self.varset
        p.terms = out
        return p

    def __add__(self, other) -> "Poly":
        if isinstance(other, (int, float)):
            other = Poly.constant(self.varset, other)
        if not isinstance(other, Poly):
            return NotImplemented
        _check_same_varset(self, other)
        terms = dict(self.terms)
        for m, c in other.terms.items():
            terms[m] = terms.get(m, 0.0) + c
        return self._canon(terms)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return self._canon({m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Poly":
        if isinstance(other, (int, float)):
            other = Poly.constant(self.varset, other)
        if not isinstance(other, Poly):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "Poly":
        return (-self) + other

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, float)):
            return self._canon({m: c * other for m, c in self.terms.items()})
        if not isinstance(other, Poly):
            return NotImplemented
        _check_same_varset(self, other)
        terms: dict[tuple, float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = tuple(ea + eb for ea, eb in zip(ma, mb))
                terms[m] = terms.get(m, 0.0) + ca * cb
        out = self._canon(terms)
        if out.terms and max(sum(m) for m in out.terms) > MAX_DEGREE:
            raise StructuralError(f"degree cap {MAX_DEGREE} exceeded in product")
        return out

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Poly":
        if not isinstance(k, int) or k < 0:
            raise StructuralError("polynomial powers must be nonnegative integers")
        out = Poly.constant(self.varset, 1.0)
        for _ in range(k):
            out = out * self
        return out

    # ---- evaluation and variable manipulation ---------------------------

    def eval(self, point: Mapping[str, float]) -> float:
        """Evaluate at a full variable assignment (extra keys ignored)."""
        vals = [float(point[nm]) for nm in self.varset.names]
        total = 0.0
        for m, c in self.terms.items():
            v = c
            for e, x in zip(m, vals):
                if e:
                    v *= x**e
            total += v
        return total

    def substitute(self, assignment: Mapping[str, float]) -> "Poly":
        """Fix some variables to numbers; result is over the remaining VarSet."""
        for nm in assignment:
            self.varset.index(nm)
        keep = [nm for nm in self.varset.names if nm not in assignment]
        new_vs = VarSet(keep)
        keep_idx = [self.varset.index(nm) for nm in keep]
        sub_idx = [(self.varset.index(nm), float(v)) for nm, v in assignment.items()]
        terms: dict[tuple, float] = {}
        for m, c in self.terms.items():
            v = c
            for i, x in sub_idx:
                if m[i]:
                    v *= x ** m[i]
            key = tuple(m[i] for i in keep_idx)
            terms[key] = terms.get(key, 0.0) + v
        out = Poly(new_vs, {})
        out.terms = {m: c for m, c in terms.items() if abs(c) >= COEFF_EPS}
        return out

    def rename_vars(self, mapping: Mapping[str, str]) -> "Poly":
        """Rename variables; names not in mapping are kept."""
        new_names = [mapping.get(nm, nm) for nm in self.varset.names]
        return Poly(VarSet(new_names), dict(self.terms))

    def with_varset(self, varset: VarSet) -> "Poly":
        """Reinterpret over another varset, matching variables by name.

        Dropped variables must not occur with nonzero exponent.
        """
        pos = {nm: k for k, nm in enumerate(varset.names)}
        terms: dict[tuple, float] = {}
        for m, c in self.terms.items():
            key = [0] * len(varset)
            for nm, e in zip(self.varset.names, m):
                if e == 0:
                    continue
                if nm not in pos:
                    raise StructuralError(f"variable {nm!r} occurs but is absent from target varset")
                key[pos[nm]] = e
            key = tuple(key)
            terms[key] = terms.get(key, 0.0) + c
        return Poly(varset, terms)

    def integrate_box(self, names: Sequence[str], box: "Box") -> "Poly":
        """Definite integral over a box in the given variables.

        The result is a polynomial over the remaining variables.
        """
        names = list(names)
        for nm in names:
            self.varset.index(nm)
        if len(set(names)) != len(names):
            raise StructuralError("duplicate integration variables")
        ivals = [(self.varset.index(nm),) + box.interval(nm) for nm in names]
        keep = [nm for nm in self.varset.names if nm not in names]
        new_vs = VarSet(keep)
        keep_idx = [self.varset.index(nm) for nm in keep]
        terms: dict[tuple, float] = {}
        for m, c in self.terms.items():
            v = c
            for i, lo, hi in ivals:
                e = m[i]
                v *= (hi ** (e + 1) - lo ** (e + 1)) / (e + 1)
            key = tuple(m[i] for i in keep_idx)
            terms[key] = terms.get(key, 0.0) + v
        out = Poly(new_vs, {})
        out.terms = {m: c for m, c in terms.items() if abs(c) >= COEFF_EPS}
        return out

    # ---- textual form ----------------------------------------------------

    def to_coeff_map(self) -> dict[str, float]:
        """Monomial-keyed map, e.g. {"1": 2.0, "rho^2*theta": -1.0}."""
        out = {}
        for m in sorted(self.terms, key=lambda m: (sum(m), m)):
            out[monomial_key(self.varset, m)] = self.terms[m]
        return out

    def __repr__(self) -> str:
        if not self.terms:
            return "Poly(0)"
        parts = [f"{c:g}*{monomial_key(self.varset, m)}" for m, c in sorted(self.terms.items(), key=lambda t: (sum(t[0]), t[0]))]
        return "Poly(" + " + ".join(parts) + ")"


def monomial_key(varset: VarSet, mono: tuple) -> str:
    """Canonical text key for an exponent tuple: "1", "rho", "rho^2*theta"."""
    factors = []
    for nm, e in zip(varset.names, mono):
        if e == 1:
            factors.append(nm)
        elif e > 1:
            factors.append(f"{nm}^{e}")
    return "*".join(factors) if factors else "1"


def parse_monomial_key(key: str, varset: VarSet) -> tuple:
    """Inverse of monomial_key; rejects malformed or duplicate factors."""
    if not isinstance(key, str) or not key:
        raise StructuralError(f"monomial key must be a nonempty string, got {key!r}")
    if key == "1":
        return (0,) * len(varset)
    expo = [0] * len(varset)
    for factor in key.split("*"):
        m = re.match(r"^([A-Za-z_][A-Za-z_0-9]*)(?:\^([0-9]+))?$", factor)
        if not m:
            raise StructuralError(f"malformed monomial factor {factor!r} in key {key!r}")
        nm, pw = m.group(1), m.group(2)
        e = int(pw) if pw is not None else 1
        if e < 1:
            raise StructuralError(f"exponent must be >= 1 in factor {factor!r}")
        k = varset.index(nm)
        if expo[k] != 0:
            raise StructuralError(f"variable {nm!r} repeated in key {key!r}")
        expo[k] = e
    return tuple(expo)


_NUMBER_RE = re.compile(r"(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")
_MONO_RE = re.compile(
    r"[A-Za-z_][A-Za-z_0-9]*(?:\^[0-9]+)?(?:\*[A-Za-z_][A-Za-z_0-9]*(?:\^[0-9]+)?)*")


def poly_from_string(text: str, varset: VarSet) -> Poly:
    """Parse "3 - rho + 0.5*rho^2*theta": signed terms of coeff, monomial, or
    coeff*monomial, with monomials in the same restricted syntax as the
    coefficient-map keys.  Repeated monomials sum."""
    if not isinstance(text, str) or not text.strip():
        raise StructuralError(f"polynomial string must be nonempty, got {text!r}")
    terms: dict[tuple, float] = {}
    pos, first = 0, True
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            if first:
                raise StructuralError(f"no terms in polynomial string {text!r}")
            return Poly(varset, {m: c for m, c in terms.items() if c != 0.0})
        sign = 1.0
        if text[pos] in "+-":
            sign = -1.0 if text[pos] == "-" else 1.0
            pos += 1
            while pos < len(text) and text[pos].isspace():
                pos += 1
        elif not first:
            raise StructuralError(
                f"expected '+' or '-' at position {pos} in {text!r}")
        coeff, mono = 1.0, None
        m = _NUMBER_RE.match(text, pos)
        if m:
            coeff, pos = float(m.group()), m.end()
            if pos < len(text) and text[pos] == "*":
                pos += 1
                m = _MONO_RE.match(text, pos)
                if not m:
                    raise StructuralError(
                        f"expected a monomial after '*' at position {pos} in {text!r}")
                mono, pos = m.group(), m.end()
        else:
            m = _MONO_RE.match(text, pos)
            if not m:
                raise StructuralError(
                    f"expected a number or monomial at position {pos} in {text!r}")
            mono, pos = m.group(), m.end()
        key = parse_monomial_key(mono, varset) if mono else (0,) * len(varset)
        terms[key] = terms.get(key, 0.0) + sign * coeff
        first = False


def poly_from_coeff_map(obj: Mapping[str, float], varset: VarSet) -> Poly:
    """Build a Poly from a monomial-keyed map (the JSON text format)."""
    if not isinstance(obj, Mapping):
        raise StructuralError(f"coefficient map must be an object, got {type(obj).__name__}")
    terms: dict[tuple, float] = {}
    for key, val in obj.items():
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise StructuralError(f"coefficient for {key!r} must be a number")
        mono = parse_monomial_key(key, varset)
        if mono in terms:
            raise StructuralError(f"duplicate monomial {key!r}")
        terms[mono] = float(val)
    return Poly(varset, terms)


class Box:
    """Axis-aligned closed box: per-variable intervals [lo, hi], lo <= hi."""

    __slots__ = ("intervals",)

    def __init__(self, intervals: Mapping[str, tuple]):
        clean = {}
        for nm, (lo, hi) in intervals.items():
            if not _NAME_RE.match(nm):
                raise StructuralError(f"invalid variable name {nm!r}")
            lo, hi = float(lo), float(hi)
            if not (lo <= hi) or not (math.isfinite(lo) and math.isfinite(hi)):
                raise StructuralError(f"invalid interval [{lo}, {hi}] for {nm!r}")
            clean[nm] = (lo, hi)
        if not clean:
            raise StructuralError("box needs at least one variable")
        self.intervals = clean

    @property
    def names(self) -> tuple:
        return tuple(self.intervals)

    def interval(self, name: str) -> tuple:
        try:
            return self.intervals[name]
        except KeyError:
            raise StructuralError(f"no interval for variable {name!r}") from None

    def measure(self) -> float:
        out = 1.0
        for lo, hi in self.intervals.values():
            out *= hi - lo
        return out

    def contains(self, point: Mapping[str, float], tol: float = 0.0) -> bool:
        return all(lo - tol <= float(point[nm]) <= hi + tol for nm, (lo, hi) in self.intervals.items())

    def renamed(self, mapping: Mapping[str, str]) -> "Box":
        return Box({mapping.get(nm, nm): iv for nm, iv in self.intervals.items()})

    def grid(self, density: int) -> list[dict]:
        """Uniform tensor grid with `density` points per axis (endpoints included)."""
        if density < 2:
            raise StructuralError("grid density must be >= 2")
        axes = [np.linspace(lo, hi, density) for lo, hi in self.intervals.values()]
        names = self.names
        return [dict(zip(names, pt)) for pt in itertools.product(*axes)]

    def indicator_poly(self, varset: VarSet) -> Poly:
        """Product of (x - lo)(hi - x) over the box variables: >= 0 exactly on the box."""
        g = Poly.constant(varset, 1.0)
        for nm, (lo, hi) in self.intervals.items():
            x = Poly.variable(varset, nm)
            g = g * (x - lo) * (hi - x)
        return g

    def __repr__(self) -> str:
        return "Box(" + ", ".join(f"{nm}=[{lo:g},{hi:g}]" for nm, (lo, hi) in self.intervals.items()) + ")"


def monomials_up_to(varset: VarSet, degree: int) -> list[tuple]:
    """All exponent tuples of total degree <= degree, graded lexicographic order."""
    if degree < 0:
        raise StructuralError("degree must be >= 0")
    nv = len(varset)
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(nv), d):
            mono = [0] * nv
            for i in combo:
                mono[i] += 1
            out.append(tuple(mono))
    # deterministic order: by degree, then lexicographic on the tuple
    seen = sorted(set(out), key=lambda m: (sum(m), m))
    return seen


class PolyMatrix:
    """Dense matrix of Poly entries sharing one VarSet."""

    __slots__ = ("rows", "cols", "varset", "entries", "symmetric")

    def __init__(self, rows: int, cols: int, varset: VarSet, entries: Sequence[Poly], symmetric: bool = False):
        if rows < 0 or cols < 0:
            raise StructuralError("matrix dimensions must be nonnegative")
        entries = list(entries)
        if len(entries) != rows * cols:
            raise StructuralError(f"expected {rows * cols} entries, got {len(entries)}")
        for p in entries:
            if not isinstance(p, Poly):
                raise StructuralError("matrix entries must be Poly")
            if p.varset != varset:
                raise StructuralError("matrix entries must share the matrix varset")
        self.rows = rows
        self.cols = cols
        self.varset = varset
        self.entries = entries
        self.symmetric = bool(symmetric)
        if self.symmetric:
            if rows != cols:
                raise StructuralError("symmetric matrix must be square")
            for i in range(rows):
                for j in range(i + 1, cols):
                    if self.entry(i, j) != self.entry(j, i):
                        raise StructuralError(f"symmetric flag set but entries ({i},{j}) != ({j},{i})")

    # ---- constructors ----------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int, varset: VarSet, symmetric: bool = False) -> "PolyMatrix":
        z = Poly.zero(varset)
        return cls(rows, cols, varset, [z] * (rows * cols), symmetric=symmetric and rows == cols)

    @classmethod
    def identity(cls, n: int, varset: VarSet, scale: float = 1.0) -> "PolyMatrix":
        one = Poly.constant(varset, scale)
        z = Poly.zero(varset)
        return cls(n, n, varset, [one if i == j else z for i in range(n) for j in range(n)], symmetric=True)

    @classmethod
    def from_rows(cls, rows_of_entries: Sequence[Sequence], varset: VarSet, symmetric: bool = False) -> "PolyMatrix":
        """Entries may be Poly or numbers (lifted to constants)."""
        nr = len(rows_of_entries)
        nc = len(rows_of_entries[0]) if nr else 0
        flat = []
        for row in rows_of_entries:
            if len(row) != nc:
                raise StructuralError("ragged rows")
            for e in row:
                flat.append(e if isinstance(e, Poly) else Poly.constant(varset, float(e)))
        return cls(nr, nc, varset, flat, symmetric=symmetric)

    @classmethod
    def from_numeric(cls, arr: np.ndarray, varset: VarSet, symmetric: bool = False) -> "PolyMatrix":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2:
            raise StructuralError("numeric matrix must be 2-dimensional")
        return cls.from_rows(arr.tolist(), varset, symmetric=symmetric)

    # ---- access ------------------------------------------------------------

    def entry(self, i: int, j: int) -> Poly:
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise StructuralError(f"index ({i},{j}) out of range for {self.rows}x{self.cols}")
        return self.entries[i * self.cols + j]

    def map(self, fn: Callable[[Poly], Poly], symmetric: bool | None = None) -> "PolyMatrix":
        entries = [fn(p) for p in self.entries]
        vs = entries[0].varset if entries else self.varset
        sym = self.symmetric if symmetric is None else symmetric
        return PolyMatrix(self.rows, self.cols, vs, entries, symmetric=sym)

    # ---- algebra -------------------------------------------------------------

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise StructuralError("shape mismatch in matrix sum")
        entries = [a + b for a, b in zip(self.entries, other.entries)]
        return PolyMatrix(self.rows, self.cols, self.varset, entries, symmetric=self.symmetric and other.symmetric)

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-other)

    def __neg__(self) -> "PolyMatrix":
        return self.map(lambda p: -p)

    def __mul__(self, scalar) -> "PolyMatrix":
        if isinstance(scalar, (int, float)):
            return self.map(lambda p: p * scalar)
        if isinstance(scalar, Poly):
            return self.map(lambda p: p * scalar, symmetric=self.symmetric)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        if self.cols != other.rows:
            raise StructuralError(f"shape mismatch in product: {self.rows}x{self.cols} @ {other.rows}x{other.cols}")
        if self.varset != other.varset:
            raise StructuralError("varset mismatch in matrix product")
        z = Poly.zero(self.varset)
        entries = []
        for i in range(self.rows):
            for j in range(other.cols):
                acc = z
                for k in range(self.cols):
                    acc = acc + self.entry(i, k) * other.entry(k, j)
                entries.append(acc)
        return PolyMatrix(self.rows, other.cols, self.varset, entries)

    def transpose(self) -> "PolyMatrix":
        entries = [self.entry(j, i) for i in range(self.cols) for j in range(self.rows)]
        return PolyMatrix(self.cols, self.rows, self.varset, entries, symmetric=self.symmetric)

    @property
    def T(self) -> "PolyMatrix":
        return self.transpose()

    def he(self) -> "PolyMatrix":
        """Hermitian part M + M^T (no 1/2 factor)."""
        if self.rows != self.cols:
            raise StructuralError("he() needs a square matrix")
        out = self + self.transpose()
        return PolyMatrix(out.rows, out.cols, out.varset, out.entries, symmetric=True)

    # ---- evaluation and variable manipulation ---------------------------------

    def eval_at(self, point: Mapping[str, float]) -> np.ndarray:
        out = np.empty((self.rows, self.cols))
        for i in range(self.rows):
            for j in range(self.cols):
                out[i, j] = self.entry(i, j).eval(point)
        return out

    def substitute(self, assignment: Mapping[str, float]) -> "PolyMatrix":
        return self.map(lambda p: p.substitute(assignment))

    def rename_vars(self, mapping: Mapping[str, str]) -> "PolyMatrix":
        return self.map(lambda p: p.rename_vars(mapping))

    def with_varset(self, varset: VarSet) -> "PolyMatrix":
        if not self.entries:  # zero-size: map() has no entry to take the varset from
            return PolyMatrix(self.rows, self.cols, varset, [], symmetric=self.symmetric)
        return self.map(lambda p: p.with_varset(varset))

    def integrate_box(self, names: Sequence[str], box: Box) -> "PolyMatrix":
        return self.map(lambda p: p.integrate_box(names, box))

    def max_degree(self) -> float:
        degs = [p.degree() for p in self.entries]
        return max(degs) if degs else float("-inf")

    def __repr__(self) -> str:
        return f"PolyMatrix({self.rows}x{self.cols} over {self.varset.names})"
