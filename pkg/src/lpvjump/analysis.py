"""Certification and synthesis for LPV systems with Poisson parameter jumps.

Three matrix-inequality programs drive everything here: a mean-square decay
certificate, an L2-gain bound, and gain-scheduled state-feedback synthesis.
Each is localized to the parameter set with SOS multipliers and handed to the
SOS compiler; verdicts come back from the homogeneous-embedding SDP solver,
so "infeasible" always means infeasible at the chosen degrees, never a claim
about the system itself.  Every returned certificate carries an a posteriori
grid report computed independently of the solver.
"""

from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .polyalg import Box, Poly, PolyMatrix, StructuralError, VarSet
from .sdpsolve import SdpOptions, SdpStatus, solve
from .sosprog import (
    EPS_POS,
    EPS_STRICT,
    LinExpr,
    LinPolyMatrix,
    SemialgebraicSet,
    SosProgram,
    lin_block,
)

# grid margins below this are treated as violations of a certificate
MARGIN_TOL = 1e-6

# |det Q| at a grid node below this makes the controller unusable
DET_FLOOR = 1e-10


def _kernel_grid_density(npar: int) -> int:
    # sign checks sample all (rho, theta) pairs, so keep the pair count near 2e5
    return min(21, max(3, int(round(250000.0 ** (1.0 / (2 * npar))))))


class ControllerSingular(RuntimeError):
    """det Q is (near) zero somewhere on the parameter set."""

    def __init__(self, message: str, node=None, value: float | None = None):
        super().__init__(message)
        self.node = node
        self.value = value


class NumericalWarning(RuntimeWarning):
    """Solver verdicts were inconsistent or a probe failed numerically."""


# ---- rational matrices --------------------------------------------------------


@dataclass(frozen=True)
class RationalMatrix:
    """Polynomial matrix divided by a shared scalar polynomial."""

    numerator: PolyMatrix
    denominator: Poly

    def __post_init__(self):
        if self.numerator.varset != self.denominator.varset:
            raise StructuralError("numerator and denominator must share variables")
        if self.denominator.is_zero():
            raise StructuralError("zero denominator")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.numerator.rows, self.numerator.cols)

    @property
    def varset(self) -> VarSet:
        return self.numerator.varset

    def eval_at(self, point) -> np.ndarray:
        den = self.denominator.eval(point)
        if abs(den) <= DET_FLOOR:
            raise ControllerSingular(
                f"denominator {den:.3e} at {dict(point)}", node=dict(point), value=den)
        return self.numerator.eval_at(point) / den


# ---- system data model ---------------------------------------------------------


class LpvJumpSystem:
    """LPV plant whose parameter jumps at Poissonian times.

        dx/dt = A(rho) x + B(rho) u + E(rho) w
        z     = C(rho) x + D(rho) u + F(rho) w

    rho is piecewise constant on the domain; jumps from rho into d(theta) occur
    at rate kernel(rho, theta).  The kernel is a polynomial over the parameter
    names followed by an equal number of jump-destination names.
    """

    def __init__(self, A: PolyMatrix, domain, kernel: Poly,
                 B: PolyMatrix | None = None, C: PolyMatrix | None = None,
                 D: PolyMatrix | None = None, E: PolyMatrix | None = None,
                 F: PolyMatrix | None = None):
        if isinstance(domain, Box):
            domain = SemialgebraicSet.from_box(domain)
        self.domain = domain
        vs = domain.varset
        if A.rows != A.cols:
            raise StructuralError(f"A must be square, got {A.rows}x{A.cols}")
        if A.varset != vs:
            raise StructuralError("A must use the domain's parameter variables")
        n = A.rows
        m = next((M.cols for M in (B, D) if M is not None), 0)
        p = next((M.cols for M in (E, F) if M is not None), 0)
        q = next((M.rows for M in (C, D, F) if M is not None), 0)
        self.A = A
        self.B = self._conform("B", B, n, m, vs)
        self.C = self._conform("C", C, q, n, vs)
        self.D = self._conform("D", D, q, m, vs)
        self.E = self._conform("E", E, n, p, vs)
        self.F = self._conform("F", F, q, p, vs)
        self.n, self.m, self.p, self.q = n, m, p, q

        names = kernel.varset.names
        npar = len(vs)
        if len(names) != 2 * npar:
            raise StructuralError(
                f"kernel must use {npar} parameter + {npar} destination variables, "
                f"got {len(names)}")
        if names[:npar] != vs.names:
            raise StructuralError(
                f"kernel variables must start with the parameter names {vs.names}")
        if set(names[npar:]) & set(vs.names):
            raise StructuralError("jump-destination names collide with parameter names")
        self.kernel = kernel
        self._check_kernel_sign()

    @staticmethod
    def _conform(name: str, M: PolyMatrix | None, rows: int, cols: int, vs: VarSet) -> PolyMatrix:
        if M is None:
            return PolyMatrix.zeros(rows, cols, vs)
        if M.varset != vs:
            raise StructuralError(f"{name} must use the domain's parameter variables")
        if (M.rows, M.cols) != (rows, cols):
            raise StructuralError(f"{name} must be {rows}x{cols}, got {M.rows}x{M.cols}")
        return M

    def _check_kernel_sign(self) -> None:
        dens = _kernel_grid_density(len(self.param_names))
        pts_r = self.domain.box.grid(dens)
        pts_t = self.theta_box.grid(dens)
        for pr in pts_r:
            for pt in pts_t:
                val = self.kernel.eval({**pr, **pt})
                if val < 0.0:
                    raise StructuralError(
                        f"kernel is negative ({val:.3e}) at {pr} -> {pt}")

    @property
    def param_names(self) -> tuple:
        return self.domain.varset.names

    @property
    def jump_names(self) -> tuple:
        return self.kernel.varset.names[len(self.param_names):]

    @property
    def jump_map(self) -> dict:
        return dict(zip(self.param_names, self.jump_names))

    @functools.cached_property
    def theta_box(self) -> Box:
        return self.domain.box.renamed(self.jump_map)

    @functools.cached_property
    def lam_bar(self) -> Poly:
        """Total jump intensity: the kernel integrated over destinations."""
        out = self.kernel.integrate_box(self.jump_names, self.theta_box)
        return out.with_varset(self.domain.varset)

    def time_scaled(self, c: float) -> "LpvJumpSystem":
        """The same plant on the clock t' = c t.

        Drift, input and disturbance matrices and the jump kernel all divide
        by c; the output map is untouched.  L2 gains and state-feedback laws
        are invariant under this reparameterization, so a level certified for
        the scaled plant holds verbatim for the original.
        """
        if c <= 0.0:
            raise StructuralError("time scale must be positive")
        s = 1.0 / c
        return LpvJumpSystem(self.A * s, self.domain, self.kernel * s,
                             B=self.B * s, C=self.C, D=self.D,
                             E=self.E * s, F=self.F)

    def __repr__(self) -> str:
        return (f"LpvJumpSystem(n={self.n}, m={self.m}, p={self.p}, q={self.q}, "
                f"params={self.param_names})")


# ---- generator integral ---------------------------------------------------------


def generator_term(P: PolyMatrix, kernel: Poly, box: Box) -> PolyMatrix:
    """Jump part of the generator on quadratic forms:

        G(rho) = integral over theta of kernel(rho,theta) * (P(theta) - P(rho)).

    P lives over the parameter names; the kernel appends the destination names.
    """
    npar = len(P.varset)
    names = kernel.varset.names
    if len(names) != 2 * npar or names[:npar] != P.varset.names:
        raise StructuralError(
            f"kernel variables must be {P.varset.names} plus destination names")
    theta_names = names[npar:]
    if set(theta_names) & set(P.varset.names):
        raise StructuralError("destination names collide with parameter names")
    if set(box.names) != set(P.varset.names):
        raise StructuralError("box must cover exactly the parameter variables")
    mapping = dict(zip(P.varset.names, theta_names))
    full = kernel.varset
    diff = P.rename_vars(mapping).with_varset(full) - P.with_varset(full)
    out = (diff * kernel).integrate_box(theta_names, box.renamed(mapping))
    out = out.with_varset(P.varset)
    return PolyMatrix(out.rows, out.cols, out.varset, out.entries, symmetric=P.symmetric)


def _generator_term_lin(P_expr: LinPolyMatrix, kernel: Poly, box: Box) -> LinPolyMatrix:
    """generator_term on a decision matrix, keeping the handles affine."""
    npar = len(P_expr.varset)
    full = kernel.varset
    theta_names = full.names[npar:]
    mapping = dict(zip(P_expr.varset.names, theta_names))
    diff = (P_expr.rename_vars(mapping).with_varset(full)
            - P_expr.with_varset(full))
    out = diff.mul_poly(kernel).integrate_box(theta_names, box.renamed(mapping))
    return out.with_varset(P_expr.varset)


# ---- outcome types --------------------------------------------------------------


@dataclass(frozen=True)
class GridCheckItem:
    label: str
    min_margin: float
    node: tuple
    advisory: bool = False


@dataclass
class GridReport:
    """Worst-case eigenvalue margins of the certified inequalities on a grid."""

    density: int
    items: list[GridCheckItem] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(it.min_margin >= -MARGIN_TOL for it in self.items if not it.advisory)

    def margin(self, label: str) -> float:
        for it in self.items:
            if it.label == label:
                return it.min_margin
        raise KeyError(label)

    def __repr__(self) -> str:
        worst = min((it.min_margin for it in self.items if not it.advisory), default=math.nan)
        return f"GridReport(passed={self.passed}, worst={worst:.3e}, density={self.density})"


@dataclass
class Infeasible:
    """No certificate at the requested degrees.

    kind is "infeasible" for a certified infeasibility of the relaxation and
    "numerical_failure" when the solver could not decide.
    """

    kind: str
    status: str
    degree: int
    message: str = ""
    alpha: float | None = None
    gamma: float | None = None
    solver_info: dict | None = None

    @property
    def is_numerical(self) -> bool:
        return self.kind == "numerical_failure"


@dataclass
class StabilityCertificate:
    P: PolyMatrix
    alpha: float
    multipliers_pos: list[PolyMatrix]
    multipliers_lmi: list[PolyMatrix]
    grid_report: GridReport
    degree: int
    eps: float
    eps_strict: float
    solver_info: dict


@dataclass
class L2Certificate:
    P: PolyMatrix
    gamma: float
    multipliers_pos: list[PolyMatrix]
    multipliers_lmi: list[PolyMatrix]
    grid_report: GridReport
    degree: int
    eps: float
    eps_strict: float
    solver_info: dict


@dataclass
class SynthesisResult:
    Q: PolyMatrix
    U: PolyMatrix
    Z: PolyMatrix
    gamma: float
    K: RationalMatrix
    grid_report: GridReport
    kernel_encoding: str
    degree: int
    eps: float
    eps_strict: float
    solver_info: dict
    # clock used for the solve; K and gamma are invariant, while Q, U, Z and
    # the grid report refer to the plant on t' = time_scale * t
    time_scale: float = 1.0


@dataclass
class DecayRateResult:
    alpha: float
    certificate: StabilityCertificate
    history: list[tuple[float, str]]
    warnings: list[str] = field(default_factory=list)


@dataclass
class BisectOptions:
    tol: float = 1e-3
    alpha_hi: float | None = None
    max_doublings: int = 20


# ---- shared program plumbing -----------------------------------------------------


def _default_mult_degree(deg: int) -> int:
    # multipliers match the certificate degree, rounded up to even so the
    # localized products stay SOS-representable
    return deg if deg % 2 == 0 else deg + 1


def _solver_info(raw, compiled) -> dict:
    return {
        "status": raw.status.value,
        "iterations": raw.iterations,
        "primal_objective": raw.primal_objective,
        "dual_objective": raw.dual_objective,
        "primal_residual": raw.primal_residual,
        "dual_residual": raw.dual_residual,
        "gap": raw.gap,
        "message": raw.message,
        "handles": compiled.program.num_handles,
        "rows": len(compiled.problem.b),
    }


def _run(prog: SosProgram, sdp_options: SdpOptions | None):
    """Compile, solve and classify.  Returns (verdict, solution, info)."""
    compiled = prog.compile()
    raw = solve(compiled.problem, sdp_options or SdpOptions())
    info = _solver_info(raw, compiled)
    if raw.status == SdpStatus.OPTIMAL:
        return "feasible", compiled.recover(raw), info
    if raw.status == SdpStatus.PRIMAL_INFEASIBLE:
        return "infeasible", None, info
    # DUAL_INFEASIBLE on a feasibility program with a trace objective means
    # the solver lost its footing, not that the program is unbounded
    return "numerical_failure", None, info


def _grid_density(num_axes: int, override: int | None = None) -> int:
    if override is not None:
        if override < 2:
            raise StructuralError("grid density must be >= 2")
        return override
    if num_axes == 1:
        return 201
    if num_axes == 2:
        return 41
    return max(5, int(round(2000.0 ** (1.0 / num_axes))))


def _min_eig(M: np.ndarray) -> float:
    if M.size == 0:
        return math.inf
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


# ---- domain normalization --------------------------------------------------------


def _affine_compose(p: Poly, mapping: dict) -> Poly:
    """Exact substitution x := a*x + b for every name in mapping ((a, b) pairs)."""
    vs = p.varset
    names = tuple(vs)
    if all(mapping.get(nm, (1.0, 0.0)) == (1.0, 0.0) for nm in names):
        return p
    images = []
    for nm in names:
        a, b = mapping.get(nm, (1.0, 0.0))
        images.append(Poly.variable(vs, nm) * a + Poly.constant(vs, b))
    out = Poly.zero(vs)
    for mono, coeff in p.terms.items():
        term = Poly.constant(vs, coeff)
        for img, e in zip(images, mono):
            if e:
                term = term * img ** e
        out = out + term
    return out


def _compose_matrix(M: PolyMatrix, mapping: dict) -> PolyMatrix:
    return M.map(lambda p: _affine_compose(p, mapping))


class _UnitBoxMap:
    """Affine reparameterization of the domain onto [-1, 1]^N.

    Programs are assembled in the centered coordinates (same variable names)
    and recovered certificates are composed back.  Both directions are exact
    polynomial maps, so feasibility, verdicts and the eps floors carry over
    unchanged; only the conditioning of the Gram systems improves.  The
    jump-destination copy of each variable gets the same map, and the kernel
    picks up the Jacobian of the destination integral.
    """

    def __init__(self, sys: LpvJumpSystem):
        box = sys.domain.box
        self.fwd: dict = {}
        jac = 1.0
        trivial = True
        for nm, (lo, hi) in box.intervals.items():
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            if half <= 1e-12:
                self.fwd[nm] = (1.0, mid)
                trivial = trivial and abs(mid) <= 1e-12
                continue
            self.fwd[nm] = (half, mid)
            jac *= half
            if abs(mid) > 1e-12 or abs(half - 1.0) > 1e-12:
                trivial = False
        self.trivial = trivial
        if trivial:
            return
        fwd_all = dict(self.fwd)
        for pn, tn in sys.jump_map.items():
            fwd_all[tn] = self.fwd[pn]
        unit = {nm: ((-1.0, 1.0) if a > 1e-12 else (0.0, 0.0))
                for nm, (a, _) in self.fwd.items()}
        dom = SemialgebraicSet(Box(unit), sys.domain.varset,
                               [_affine_compose(g, self.fwd) for g in sys.domain.extra])
        self.system = LpvJumpSystem(
            _compose_matrix(sys.A, self.fwd), dom,
            _affine_compose(sys.kernel, fwd_all) * jac,
            B=_compose_matrix(sys.B, self.fwd), C=_compose_matrix(sys.C, self.fwd),
            D=_compose_matrix(sys.D, self.fwd), E=_compose_matrix(sys.E, self.fwd),
            F=_compose_matrix(sys.F, self.fwd))
        self.inv = {nm: (1.0 / a, -b / a) for nm, (a, b) in self.fwd.items()}
        # the box indicator prod (x-lo)(hi-x) picks up prod a^2 under the map
        self.indicator_scale = 1.0 / math.prod(a * a for a, _ in self.fwd.values())

    def pull_back(self, M: PolyMatrix) -> PolyMatrix:
        return _compose_matrix(M, self.inv)

    def pull_back_multipliers(self, mats: list) -> list:
        # index 0 multiplies the box indicator, whose pullback is rescaled;
        # extra constraints compose to themselves exactly
        out = []
        for i, G in enumerate(mats):
            G = self.pull_back(G)
            if i == 0:
                G = G * self.indicator_scale
            out.append(G)
        return out


class _MarginTracker:
    """Keeps the worst margin and the node where it happened."""

    def __init__(self, label: str, advisory: bool = False):
        self.label = label
        self.advisory = advisory
        self.min_margin = math.inf
        self.node: tuple = ()

    def update(self, margin: float, node) -> None:
        if margin < self.min_margin:
            self.min_margin = margin
            self.node = tuple(sorted(node.items())) if isinstance(node, dict) else tuple(node)

    def item(self) -> GridCheckItem:
        return GridCheckItem(self.label, self.min_margin, self.node, self.advisory)


# ---- Theorem-1 style stability certification --------------------------------------


def _stability_program(sys: LpvJumpSystem, alpha: float, deg_p: int, deg_mult: int,
                       eps: float, eps_strict: float) -> SosProgram:
    vs = sys.domain.varset
    n = sys.n
    prog = SosProgram()
    P = prog.declare_poly_matrix("P", n, vs, deg_p)
    Pe = P.expr()
    pos = Pe - LinPolyMatrix.identity_scaled(n, vs, eps)
    lhs = Pe.matmul_right(sys.A).he()
    lhs = lhs + _generator_term_lin(Pe, sys.kernel, sys.domain.box)
    if alpha != 0.0:
        lhs = lhs + Pe.scale(2.0 * alpha)
    decay = (-lhs) - LinPolyMatrix.identity_scaled(n, vs, eps_strict)
    for i, g in enumerate(sys.domain.constraint_polys()):
        G1 = prog.declare_poly_matrix(f"G1_{i}", n, vs, deg_mult)
        G2 = prog.declare_poly_matrix(f"G2_{i}", n, vs, deg_mult)
        prog.add_sos_matrix_constraint(G1.expr(), f"mult_pos_{i}")
        prog.add_sos_matrix_constraint(G2.expr(), f"mult_decay_{i}")
        pos = pos - G1.expr().mul_poly(g)
        decay = decay - G2.expr().mul_poly(g)
    prog.add_sos_matrix_constraint(pos, "lyapunov_floor")
    prog.add_sos_matrix_constraint(decay, "decay_lmi")
    return prog


def _stability_grid_report(sys: LpvJumpSystem, P: PolyMatrix, alpha: float,
                           eps: float, density: int | None) -> GridReport:
    dens = _grid_density(len(sys.param_names), density)
    nodes = sys.domain.grid(dens)
    lhs = (P @ sys.A).he() + generator_term(P, sys.kernel, sys.domain.box)
    if alpha != 0.0:
        lhs = lhs + P * (2.0 * alpha)
    eye = np.eye(sys.n)
    t_pos = _MarginTracker("lyapunov_floor")
    t_lmi = _MarginTracker("decay_lmi")
    for pt in nodes:
        t_pos.update(_min_eig(P.eval_at(pt) - eps * eye), pt)
        t_lmi.update(_min_eig(-lhs.eval_at(pt)), pt)
    return GridReport(density=dens, items=[t_pos.item(), t_lmi.item()])


def certify_stability(sys: LpvJumpSystem, alpha: float, deg_p: int = 2,
                      deg_mult: int | None = None, *, eps: float = EPS_POS,
                      eps_strict: float = EPS_STRICT,
                      sdp_options: SdpOptions | None = None,
                      grid_density: int | None = None):
    """Mean-square exponential stability certificate at decay rate alpha.

    Returns a StabilityCertificate or an Infeasible report; only A and the
    kernel participate (the inputs are irrelevant to open-loop decay).
    """
    if alpha < 0.0:
        raise StructuralError("alpha must be >= 0")
    if deg_mult is None:
        deg_mult = _default_mult_degree(deg_p)
    umap = _UnitBoxMap(sys)
    work = sys if umap.trivial else umap.system
    prog = _stability_program(work, alpha, deg_p, deg_mult, eps, eps_strict)
    verdict, sol, info = _run(prog, sdp_options)
    if verdict != "feasible":
        return Infeasible(kind=verdict, status=info["status"], degree=deg_p,
                          alpha=alpha, message=info["message"], solver_info=info)
    ngs = len(sys.domain.constraint_polys())
    P = sol.decisions["P"]
    g1 = [sol.decisions[f"G1_{i}"] for i in range(ngs)]
    g2 = [sol.decisions[f"G2_{i}"] for i in range(ngs)]
    if not umap.trivial:
        P = umap.pull_back(P)
        g1 = umap.pull_back_multipliers(g1)
        g2 = umap.pull_back_multipliers(g2)
    return StabilityCertificate(
        P=P,
        alpha=alpha,
        multipliers_pos=g1,
        multipliers_lmi=g2,
        grid_report=_stability_grid_report(sys, P, alpha, eps, grid_density),
        degree=deg_p,
        eps=eps,
        eps_strict=eps_strict,
        solver_info=info,
    )


def _grid_matrix_norm(M: PolyMatrix, domain: SemialgebraicSet) -> float:
    worst = 0.0
    for pt in domain.grid(_grid_density(len(domain.varset.names), None)):
        worst = max(worst, float(np.abs(M.eval_at(pt)).sum(axis=1).max()))
    return worst


def max_decay_rate(sys: LpvJumpSystem, deg_p: int = 2, deg_mult: int | None = None,
                   bisect_opts: BisectOptions | None = None, *, eps: float = EPS_POS,
                   eps_strict: float = EPS_STRICT,
                   sdp_options: SdpOptions | None = None,
                   grid_density: int | None = None):
    """Largest certifiable decay rate by bisection.

    Returns a DecayRateResult, or an Infeasible report when even alpha = 0
    has no certificate at these degrees.  Numerically failed probes count as
    infeasible (conservative) and are flagged with a NumericalWarning.
    """
    opts = bisect_opts or BisectOptions()
    if opts.tol <= 0.0:
        raise StructuralError("bisection tolerance must be positive")
    history: list[tuple[float, str]] = []
    warns: list[str] = []

    def probe(a: float):
        res = certify_stability(sys, a, deg_p, deg_mult, eps=eps, eps_strict=eps_strict,
                                sdp_options=sdp_options, grid_density=grid_density)
        if isinstance(res, StabilityCertificate):
            history.append((a, "feasible"))
            return res
        history.append((a, res.kind))
        if res.is_numerical:
            msg = f"solver failed at alpha={a:.6g} ({res.status}); treated as infeasible"
            warns.append(msg)
            warnings.warn(msg, NumericalWarning, stacklevel=3)
        return res

    base = probe(0.0)
    if isinstance(base, Infeasible):
        return base

    hi = opts.alpha_hi if opts.alpha_hi is not None else \
        2.0 * _grid_matrix_norm(sys.A, sys.domain) + 1.0
    lo, cert = 0.0, base
    closed = False
    for _ in range(opts.max_doublings + 1):
        res = probe(hi)
        if isinstance(res, Infeasible):
            closed = True
            break
        lo, cert = hi, res
        hi *= 2.0
    if not closed:
        msg = f"decay rate still feasible at alpha={lo:.6g}; bracket never closed"
        warns.append(msg)
        warnings.warn(msg, NumericalWarning, stacklevel=2)
        return DecayRateResult(alpha=lo, certificate=cert, history=history, warnings=warns)

    while hi - lo > opts.tol:
        mid = 0.5 * (lo + hi)
        res = probe(mid)
        if isinstance(res, StabilityCertificate):
            lo, cert = mid, res
        else:
            hi = mid

    alpha_star = lo
    worst_fail = min((a for a, v in history if v != "feasible"), default=math.inf)
    if worst_fail < alpha_star:
        # solver noise produced a failure below a feasible point; report the
        # conservative value
        msg = (f"non-monotone verdicts: failure at {worst_fail:.6g} below "
               f"feasible {alpha_star:.6g}")
        warns.append(msg)
        warnings.warn(msg, NumericalWarning, stacklevel=2)
        alpha_star = max(0.0, worst_fail - opts.tol)
        res = probe(alpha_star)
        if isinstance(res, StabilityCertificate):
            cert = res
    return DecayRateResult(alpha=alpha_star, certificate=cert, history=history, warnings=warns)


# ---- Theorem-2 style L2-gain bound --------------------------------------------------


def _l2_block(sys: LpvJumpSystem, Pe: LinPolyMatrix, gamma_sq) -> LinPolyMatrix:
    """(n+p) block of the bounded-real inequality; gamma_sq is a float or LinExpr."""
    vs = sys.domain.varset
    M11 = Pe.matmul_right(sys.A).he()
    M11 = M11 + _generator_term_lin(Pe, sys.kernel, sys.domain.box)
    M11 = M11 + LinPolyMatrix.from_polymatrix(sys.C.T @ sys.C)
    M12 = Pe.matmul_right(sys.E) + LinPolyMatrix.from_polymatrix(sys.C.T @ sys.F)
    if isinstance(gamma_sq, LinExpr):
        M22 = LinPolyMatrix.identity_scaled(sys.p, vs, gamma_sq.scale(-1.0))
    else:
        M22 = LinPolyMatrix.identity_scaled(sys.p, vs, -float(gamma_sq))
    M22 = M22 + LinPolyMatrix.from_polymatrix(sys.F.T @ sys.F)
    return lin_block([[M11, M12], [M12.transpose(), M22]], vs)


def _l2_grid_report(sys: LpvJumpSystem, P: PolyMatrix, gamma: float,
                    eps: float, density: int | None) -> GridReport:
    dens = _grid_density(len(sys.param_names), density)
    nodes = sys.domain.grid(dens)
    gen = generator_term(P, sys.kernel, sys.domain.box)
    eye_n = np.eye(sys.n)
    eye_p = np.eye(sys.p)
    t_pos = _MarginTracker("lyapunov_floor")
    t_lmi = _MarginTracker("gain_lmi")
    for pt in nodes:
        Pv = P.eval_at(pt)
        Av = sys.A.eval_at(pt)
        Cv = sys.C.eval_at(pt)
        Ev = sys.E.eval_at(pt)
        Fv = sys.F.eval_at(pt)
        M11 = Pv @ Av + Av.T @ Pv + gen.eval_at(pt) + Cv.T @ Cv
        M12 = Pv @ Ev + Cv.T @ Fv
        M22 = -(gamma ** 2) * eye_p + Fv.T @ Fv
        M = np.block([[M11, M12], [M12.T, M22]])
        t_pos.update(_min_eig(Pv - eps * eye_n), pt)
        t_lmi.update(_min_eig(-M), pt)
    return GridReport(density=dens, items=[t_pos.item(), t_lmi.item()])


def _gain_program(sys: LpvJumpSystem, gamma: float | None, deg_p: int, deg_mult: int,
                  eps: float, eps_strict: float):
    """Bounded-real program at a fixed gamma, or the gamma^2 minimization when
    gamma is None.  Returns (prog, gamma_sq_handle_or_None)."""
    vs = sys.domain.varset
    nblk = sys.n + sys.p
    prog = SosProgram()
    P = prog.declare_poly_matrix("P", sys.n, vs, deg_p)
    Pe = P.expr()
    handle = None
    if gamma is None:
        handle = prog.declare_scalar("gamma_sq", nonneg=True)
        prog.set_objective(handle)
        gamma_sq = handle
    else:
        gamma_sq = gamma ** 2
    pos = Pe - LinPolyMatrix.identity_scaled(sys.n, vs, eps)
    gain = (-_l2_block(sys, Pe, gamma_sq)) \
        - LinPolyMatrix.identity_scaled(nblk, vs, eps_strict)
    for i, g in enumerate(sys.domain.constraint_polys()):
        G1 = prog.declare_poly_matrix(f"G1_{i}", sys.n, vs, deg_mult)
        G2 = prog.declare_poly_matrix(f"G2_{i}", nblk, vs, deg_mult)
        prog.add_sos_matrix_constraint(G1.expr(), f"mult_pos_{i}")
        prog.add_sos_matrix_constraint(G2.expr(), f"mult_gain_{i}")
        pos = pos - G1.expr().mul_poly(g)
        gain = gain - G2.expr().mul_poly(g)
    prog.add_sos_matrix_constraint(pos, "lyapunov_floor")
    prog.add_sos_matrix_constraint(gain, "gain_lmi")
    return prog, handle


def l2_gain_upper_bound(sys: LpvJumpSystem, deg_p: int = 2, deg_mult: int | None = None,
                        gamma: float | None = None, *, eps: float = EPS_POS,
                        eps_strict: float = EPS_STRICT,
                        sdp_options: SdpOptions | None = None,
                        grid_density: int | None = None):
    """L2-gain bound on the disturbance-to-output channel.

    The squared gain enters the inequality linearly, so with gamma=None it is
    minimized directly as the SDP objective.  Passing gamma checks feasibility
    of that fixed level.  Returns an L2Certificate or an Infeasible report.
    """
    if sys.p == 0:
        raise StructuralError("L2 gain needs a disturbance channel (p >= 1)")
    if gamma is not None and gamma <= 0.0:
        raise StructuralError("gamma must be positive")
    if deg_mult is None:
        deg_mult = _default_mult_degree(deg_p)
    umap = _UnitBoxMap(sys)
    work = sys if umap.trivial else umap.system
    prog, gamma_sq = _gain_program(work, gamma, deg_p, deg_mult, eps, eps_strict)

    verdict, sol, info = _run(prog, sdp_options)
    if verdict != "feasible":
        return Infeasible(kind=verdict, status=info["status"], degree=deg_p,
                          gamma=gamma, message=info["message"], solver_info=info)
    if gamma is None:
        gamma_val = math.sqrt(max(gamma_sq.eval(sol.handle_values), 0.0))
    else:
        gamma_val = float(gamma)
    ngs = len(sys.domain.constraint_polys())
    Pmat = sol.decisions["P"]
    g1 = [sol.decisions[f"G1_{i}"] for i in range(ngs)]
    g2 = [sol.decisions[f"G2_{i}"] for i in range(ngs)]
    if not umap.trivial:
        Pmat = umap.pull_back(Pmat)
        g1 = umap.pull_back_multipliers(g1)
        g2 = umap.pull_back_multipliers(g2)
    return L2Certificate(
        P=Pmat,
        gamma=gamma_val,
        multipliers_pos=g1,
        multipliers_lmi=g2,
        grid_report=_l2_grid_report(sys, Pmat, gamma_val, eps, grid_density),
        degree=deg_p,
        eps=eps,
        eps_strict=eps_strict,
        solver_info=info,
    )


# ---- Theorem-3 style state-feedback synthesis ----------------------------------------


def _resolve_kernel_encoding(sys: LpvJumpSystem, encoding: str | None,
                             sqrt_kernel: Poly | None) -> tuple[str, Poly, Poly]:
    """Pick how the jump coupling enters the synthesis block.

    Returns (encoding, off_poly, diag_poly) over the kernel varset: the
    off-diagonal block is mu*off_poly*Q(rho) and the last diagonal block is
    -mu*diag_poly*Q(theta), scaled so the Schur complement reproduces the
    kernel-weighted average exactly.
    """
    full = sys.kernel.varset
    mu = sys.domain.box.measure()
    if encoding is None:
        encoding = "constant" if sys.kernel.degree() <= 0 else "scaled"
    if encoding == "constant":
        if sys.kernel.degree() > 0:
            raise StructuralError("constant kernel encoding requires a constant kernel")
        lam0 = sys.kernel.constant_value()
        return encoding, Poly.constant(full, mu * math.sqrt(max(lam0, 0.0))), \
            Poly.constant(full, mu)
    if encoding == "square":
        if sqrt_kernel is None:
            raise StructuralError("square kernel encoding needs the square-root polynomial")
        root = sqrt_kernel.with_varset(full)
        resid = root * root - sys.kernel
        scale = max(1.0, max((abs(c) for c in sys.kernel.terms.values()), default=1.0))
        worst = max((abs(c) for c in resid.terms.values()), default=0.0)
        if worst > 1e-9 * scale:
            raise StructuralError(
                f"square-root polynomial does not square to the kernel (residual {worst:.3e})")
        return encoding, root * mu, Poly.constant(full, mu)
    if encoding == "scaled":
        # valid only when the kernel is strictly positive: the Schur step
        # divides by it
        dens = _kernel_grid_density(len(sys.param_names))
        pts_r = sys.domain.box.grid(dens)
        pts_t = sys.theta_box.grid(dens)
        worst = min(sys.kernel.eval({**pr, **pt}) for pr in pts_r for pt in pts_t)
        if worst <= 0.0:
            raise StructuralError(
                f"kernel not strictly positive (min grid value {worst:.3e}); "
                "scaled encoding unavailable")
        return encoding, sys.kernel * mu, sys.kernel * mu
    raise StructuralError(f"unknown kernel encoding {encoding!r}")


def _drop_empty_blocks(cells: list[list], sizes: list[int]):
    keep = [k for k, s in enumerate(sizes) if s > 0]
    return [[cells[i][j] for j in keep] for i in keep]


def _synthesis_cells_numeric(sys: LpvJumpSystem, Q: PolyMatrix, U: PolyMatrix,
                             Z: PolyMatrix, gamma: float, mu: float, encoding: str,
                             pr: dict, pt: dict, printed_reading: bool) -> np.ndarray:
    """Evaluate the synthesis block at one (rho, theta) node."""
    full_pt = {**pr, **pt}
    Av, Bv = sys.A.eval_at(pr), sys.B.eval_at(pr)
    Cv, Dv = sys.C.eval_at(pr), sys.D.eval_at(pr)
    Ev, Fv = sys.E.eval_at(pr), sys.F.eval_at(pr)
    jm = sys.jump_map
    Qr = Q.eval_at(pr)
    Qt = Q.eval_at({nm: pt[jm[nm]] for nm in sys.param_names})
    Ur = U.eval_at(pr)
    lam = sys.kernel.eval(full_pt)
    lam_bar = sys.lam_bar.eval(pr)
    n, p, q = sys.n, sys.p, sys.q
    AQBU = Av @ Qr + Bv @ Ur
    M11 = AQBU + AQBU.T - lam_bar * Qr + Z.eval_at(full_pt)
    M13 = (Cv @ Qr + Dv @ Ur).T
    if encoding == "scaled":
        c_off, c_diag = mu * lam, mu * lam
    elif encoding == "constant":
        c_off, c_diag = mu * math.sqrt(max(lam, 0.0)), mu
    else:
        # square encoding: lam is ell^2 at this node, so ell = sqrt(lam) up
        # to sign; the block enters through ell*Q and sign flips are a
        # congruence, so the margin is sign-insensitive
        c_off, c_diag = mu * math.sqrt(max(lam, 0.0)), mu
    M14 = c_off * Qr
    M44 = -c_diag * (np.linalg.inv(Qt) if printed_reading else Qt)
    cells = [
        [M11, Ev, M13, M14],
        [Ev.T, -(gamma ** 2) * np.eye(p), Fv.T, np.zeros((p, n))],
        [M13.T, Fv, -np.eye(q), np.zeros((q, n))],
        [M14.T, np.zeros((n, p)), np.zeros((n, q)), M44],
    ]
    cells = _drop_empty_blocks(cells, [n, p, q, n])
    return np.block(cells)


def _gauss_legendre_nodes(box: Box, order: int = 32):
    """Tensor Gauss-Legendre nodes and weights over a box."""
    axes = []
    for nm in box.names:
        lo, hi = box.interval(nm)
        x, w = np.polynomial.legendre.leggauss(order)
        axes.append((nm, 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w))
    for combo in itertools.product(*[range(order)] * len(axes)):
        pt = {nm: float(vals[k]) for (nm, vals, _), k in zip(axes, combo)}
        wt = 1.0
        for (_, _, ws), k in zip(axes, combo):
            wt *= float(ws[k])
        yield pt, wt


def _closed_loop_gain_margin(sys: LpvJumpSystem, Q: PolyMatrix, K: RationalMatrix,
                             gamma: float, pr: dict, quad: list) -> float:
    """Bounded-real margin of the recovered closed loop at one node.

    P = inv(Q) and K are rational, so the generator integral is evaluated by
    quadrature rather than symbolically.
    """
    Pv = np.linalg.inv(Q.eval_at(pr))
    Kv = K.eval_at(pr)
    Av = sys.A.eval_at(pr) + sys.B.eval_at(pr) @ Kv
    Cv = sys.C.eval_at(pr) + sys.D.eval_at(pr) @ Kv
    Ev, Fv = sys.E.eval_at(pr), sys.F.eval_at(pr)
    gen = np.zeros_like(Pv)
    jm = sys.jump_map
    for pt, wt in quad:
        lam = sys.kernel.eval({**pr, **pt})
        Pt = np.linalg.inv(Q.eval_at({nm: pt[jm[nm]] for nm in sys.param_names}))
        gen += wt * lam * (Pt - Pv)
    M11 = Pv @ Av + Av.T @ Pv + gen + Cv.T @ Cv
    M12 = Pv @ Ev + Cv.T @ Fv
    M22 = -(gamma ** 2) * np.eye(sys.p) + Fv.T @ Fv
    return _min_eig(-np.block([[M11, M12], [M12.T, M22]]))


def _synthesis_grid_report(sys: LpvJumpSystem, Q: PolyMatrix, U: PolyMatrix,
                           Z: PolyMatrix, gamma: float, K: RationalMatrix,
                           encoding: str, eps: float, density: int | None) -> GridReport:
    npar = len(sys.param_names)
    mu = sys.domain.box.measure()
    dens_r = _grid_density(npar, density)
    dens_rt = _grid_density(2 * npar, density)
    nodes_r = sys.domain.grid(dens_r)
    theta_domain = sys.domain.renamed(sys.jump_map)
    nodes_rt_r = sys.domain.grid(dens_rt)
    nodes_rt_t = theta_domain.grid(dens_rt)

    eye_n = np.eye(sys.n)
    t_qpos = _MarginTracker("q_floor")
    t_det = _MarginTracker("det_q", advisory=True)
    t_lmi = _MarginTracker("synthesis_lmi")
    t_printed = _MarginTracker("synthesis_lmi_inverse_reading", advisory=True)
    t_cl = _MarginTracker("closed_loop_gain_lmi")

    for pr in nodes_r:
        t_qpos.update(_min_eig(Q.eval_at(pr) - eps * eye_n), pr)
        t_det.update(abs(K.denominator.eval(pr)), pr)
    for pr in nodes_rt_r:
        for pt in nodes_rt_t:
            M = _synthesis_cells_numeric(sys, Q, U, Z, gamma, mu, encoding, pr, pt, False)
            t_lmi.update(_min_eig(-M), {**pr, **pt})
            Mp = _synthesis_cells_numeric(sys, Q, U, Z, gamma, mu, encoding, pr, pt, True)
            t_printed.update(_min_eig(-Mp), {**pr, **pt})
    items = [t_qpos.item(), t_det.item(), t_lmi.item(), t_printed.item()]

    if sys.p > 0:
        quad = list(_gauss_legendre_nodes(sys.theta_box))
        for pr in nodes_r:
            t_cl.update(_closed_loop_gain_margin(sys, Q, K, gamma, pr, quad), pr)
        items.append(t_cl.item())

    zint = Z.integrate_box(sys.jump_names, sys.theta_box)
    worst = max((abs(c) for e in zint.entries for c in e.terms.values()), default=0.0)
    items.append(GridCheckItem("slack_integral_coeff", -worst, ()))
    return GridReport(density=dens_rt, items=items)


def _auto_time_scale(sys: LpvJumpSystem) -> float:
    """Peak total jump intensity over the domain, floored at 1."""
    peak = 0.0
    for pt in sys.domain.grid(_grid_density(len(sys.param_names), 33)):
        peak = max(peak, sys.lam_bar.eval(pt))
    return max(1.0, peak)


def _synthesis_program(work: LpvJumpSystem, gamma: float | None, minimize_gamma: bool,
                       deg_q: int, deg_u: int, deg_z: int, deg_mult: int,
                       off_poly: Poly, diag_poly: Poly,
                       eps: float, eps_strict: float):
    """Synthesis feasibility program in (Q, U, Z) over (rho, theta).

    gamma is the fixed level when minimize_gamma is False.  Returns
    (prog, gamma_sq_handle_or_None).
    """
    vs = work.domain.varset
    full = work.kernel.varset
    n, m, p, q = work.n, work.m, work.p, work.q
    mapping = work.jump_map

    prog = SosProgram()
    Q = prog.declare_poly_matrix("Q", n, vs, deg_q)
    U = prog.declare_poly_matrix("U", m, vs, deg_u, cols=n, symmetric=False)
    Z = prog.declare_poly_matrix("Z", n, full, deg_z)
    prog.add_integral_zero_constraint(Z, work.jump_names, work.theta_box, "slack_integral")

    gamma_sq = None
    q_margin = None
    if minimize_gamma:
        gamma_sq = prog.declare_scalar("gamma_sq", nonneg=True)
        prog.set_objective(gamma_sq)
        m22_scale = gamma_sq.scale(-1.0)
    else:
        m22_scale = -(gamma ** 2)
        if p > 0:
            # fixed-level feasibility has no scale anchor, and the solver
            # otherwise parks Q at the eps corner where the controller
            # recovery divides by a near-singular Q; fattening the Q floor
            # centers the iterate.  The margin is capped at unit scale:
            # when B lets U absorb any scaling of Q the uncapped anchor
            # is unbounded
            q_margin = prog.declare_scalar("q_margin", nonneg=True)
            prog.set_objective(q_margin.scale(-1.0))
            cap = LinPolyMatrix.identity_scaled(1, vs, 1.0) \
                - LinPolyMatrix.identity_scaled(1, vs, q_margin)
            prog.add_sos_matrix_constraint(cap, "q_margin_cap")

    Qe = Q.expr()
    Qf = Qe.with_varset(full)
    Uf = U.expr().with_varset(full)
    Qtheta = Qe.rename_vars(mapping).with_varset(full)
    A_f = work.A.with_varset(full)
    B_f = work.B.with_varset(full)
    C_f = work.C.with_varset(full)
    D_f = work.D.with_varset(full)
    lam_bar_f = work.lam_bar.with_varset(full)

    M11 = (Qf.matmul_left(A_f) + Uf.matmul_left(B_f)).he()
    M11 = M11 - Qf.mul_poly(lam_bar_f) + Z.expr()
    M12 = LinPolyMatrix.from_polymatrix(work.E.with_varset(full))
    M13 = (Qf.matmul_left(C_f) + Uf.matmul_left(D_f)).transpose()
    M14 = Qf.mul_poly(off_poly)
    M22 = LinPolyMatrix.identity_scaled(p, full,
                                        m22_scale if isinstance(m22_scale, LinExpr)
                                        else float(m22_scale)) if p else None
    M23 = LinPolyMatrix.from_polymatrix(work.F.with_varset(full).transpose()) \
        if (p and q) else None
    M33 = LinPolyMatrix.identity_scaled(q, full, -1.0) if q else None
    M44 = -(Qtheta.mul_poly(diag_poly))

    cells = [
        [M11, M12, M13, M14],
        [M12.transpose(), M22, M23, None],
        [M13.transpose(), M23.transpose() if M23 is not None else None, M33, None],
        [M14.transpose(), None, None, M44],
    ]
    block = lin_block(_drop_empty_blocks(cells, [n, p, q, n]), full)
    nblk_eff = block.rows

    pos = Qe - LinPolyMatrix.identity_scaled(n, vs, eps)
    if q_margin is not None:
        pos = pos - LinPolyMatrix.identity_scaled(n, vs, q_margin)
    lmi = (-block) - LinPolyMatrix.identity_scaled(nblk_eff, full, eps_strict)
    for i, g in enumerate(work.domain.constraint_polys()):
        G1 = prog.declare_poly_matrix(f"G1_{i}", n, vs, deg_mult)
        prog.add_sos_matrix_constraint(G1.expr(), f"mult_qpos_{i}")
        pos = pos - G1.expr().mul_poly(g)
    gs_full = [g.with_varset(full) for g in work.domain.constraint_polys()]
    gs_full += [g.with_varset(full)
                for g in work.domain.renamed(mapping).constraint_polys()]
    for i, g in enumerate(gs_full):
        G2 = prog.declare_poly_matrix(f"G2_{i}", nblk_eff, full, deg_mult)
        prog.add_sos_matrix_constraint(G2.expr(), f"mult_lmi_{i}")
        lmi = lmi - G2.expr().mul_poly(g)
    prog.add_sos_matrix_constraint(pos, "q_floor")
    prog.add_sos_matrix_constraint(lmi, "synthesis_lmi")
    return prog, gamma_sq


def synthesize_sf(sys: LpvJumpSystem, gamma: float | None = None, *,
                  minimize_gamma: bool = False, deg_q: int = 2, deg_u: int | None = None,
                  deg_z: int | None = None, deg_mult: int | None = None,
                  kernel_encoding: str | None = None, sqrt_kernel: Poly | None = None,
                  eps: float = EPS_POS, eps_strict: float = EPS_STRICT,
                  sdp_options: SdpOptions | None = None,
                  grid_density: int | None = None,
                  time_scale: float | None = None):
    """Gain-scheduled state feedback u = K(rho) x with a guaranteed L2 level.

    Solves the synthesis inequality over (rho, theta) in the changed variables
    (Q, U, Z), with the integral-free slack Z forced to zero mean over theta,
    then recovers K = U adj(Q) / det(Q).  Pass gamma for a fixed level or
    minimize_gamma=True to optimize it.  Returns a SynthesisResult or an
    Infeasible report.

    The solve runs on the reparameterized clock t' = c t with c = time_scale
    (default: the peak jump intensity, floored at 1), which keeps the block
    data near unit scale when the kernel is fast.  Gain levels and the
    recovered K are invariant under this change, so the result transfers to
    the original plant as is; Q, U, Z and the grid report refer to the scaled
    plant, recorded in SynthesisResult.time_scale.
    """
    if sys.m == 0:
        raise StructuralError("synthesis needs a control channel (m >= 1)")
    if minimize_gamma:
        if gamma is not None:
            raise StructuralError("pass either gamma or minimize_gamma, not both")
        if sys.p == 0:
            raise StructuralError("gamma minimization needs a disturbance channel")
    elif gamma is None:
        if sys.p > 0:
            raise StructuralError("gamma is required unless minimize_gamma is set")
        gamma = 1.0  # unused: no disturbance block
    elif gamma <= 0.0:
        raise StructuralError("gamma must be positive")
    deg_u = deg_q if deg_u is None else deg_u
    deg_z = deg_q if deg_z is None else deg_z
    if deg_mult is None:
        deg_mult = _default_mult_degree(deg_q)
    c_time = _auto_time_scale(sys) if time_scale is None else float(time_scale)
    work = sys if c_time == 1.0 else sys.time_scaled(c_time)
    if sqrt_kernel is not None and c_time != 1.0:
        # the square-root factor must track the scaled kernel: lam/c = (l/sqrt(c))^2
        sqrt_kernel = sqrt_kernel * (1.0 / math.sqrt(c_time))
    encoding, off_poly, diag_poly = _resolve_kernel_encoding(work, kernel_encoding, sqrt_kernel)
    prog, gamma_sq = _synthesis_program(work, gamma, minimize_gamma, deg_q, deg_u,
                                        deg_z, deg_mult, off_poly, diag_poly,
                                        eps, eps_strict)

    verdict, sol, info = _run(prog, sdp_options)
    if verdict != "feasible":
        return Infeasible(kind=verdict, status=info["status"], degree=deg_q,
                          gamma=None if minimize_gamma else gamma,
                          message=info["message"], solver_info=info)
    if minimize_gamma:
        gamma_val = math.sqrt(max(gamma_sq.eval(sol.handle_values), 0.0))
    else:
        gamma_val = float(gamma)
    Q_val, U_val, Z_val = sol.decisions["Q"], sol.decisions["U"], sol.decisions["Z"]
    K = extract_controller(Q_val, U_val, work.domain)
    return SynthesisResult(
        Q=Q_val,
        U=U_val,
        Z=Z_val,
        gamma=gamma_val,
        K=K,
        grid_report=_synthesis_grid_report(work, Q_val, U_val, Z_val, gamma_val, K,
                                           encoding, eps, grid_density),
        kernel_encoding=encoding,
        degree=deg_q,
        eps=eps,
        eps_strict=eps_strict,
        solver_info=info,
        time_scale=c_time,
    )


# ---- controller extraction -------------------------------------------------------


def _poly_minor(M: PolyMatrix, drop_row: int, drop_col: int) -> PolyMatrix:
    rows = [[M.entry(i, j) for j in range(M.cols) if j != drop_col]
            for i in range(M.rows) if i != drop_row]
    return PolyMatrix.from_rows(rows, M.varset)


def _poly_det(M: PolyMatrix) -> Poly:
    if M.rows != M.cols:
        raise StructuralError("determinant of a non-square matrix")
    if M.rows == 0:
        return Poly.constant(M.varset, 1.0)
    if M.rows == 1:
        return M.entry(0, 0)
    acc = Poly.zero(M.varset)
    for j in range(M.cols):
        term = M.entry(0, j) * _poly_det(_poly_minor(M, 0, j))
        acc = acc + (term if j % 2 == 0 else -term)
    return acc


def _poly_adjugate(M: PolyMatrix) -> PolyMatrix:
    n = M.rows
    if n == 1:
        return PolyMatrix.identity(1, M.varset)
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            cof = _poly_det(_poly_minor(M, j, i))
            row.append(cof if (i + j) % 2 == 0 else -cof)
        rows.append(row)
    return PolyMatrix.from_rows(rows, M.varset)


def extract_controller(Q: PolyMatrix, U: PolyMatrix, domain, n_grid: int = 100) -> RationalMatrix:
    """K = U adj(Q) / det(Q), validated pointwise on the domain.

    Cofactor expansion limits this to n <= 6.  Raises ControllerSingular when
    |det Q| dips to the floor anywhere on the grid.
    """
    if isinstance(domain, Box):
        domain = SemialgebraicSet.from_box(domain)
    n = Q.rows
    if Q.cols != n:
        raise StructuralError("Q must be square")
    if n > 6:
        raise StructuralError("symbolic adjugate supported only for n <= 6")
    if U.cols != n:
        raise StructuralError(f"U must have {n} columns")
    if U.varset != Q.varset:
        raise StructuralError("Q and U must share variables")
    det = _poly_det(Q)
    K = RationalMatrix(U @ _poly_adjugate(Q), det)
    npar = len(domain.varset.names)
    density = n_grid if npar == 1 else max(2, math.ceil(n_grid ** (1.0 / npar)))
    worst_node, worst_val = None, math.inf
    for pt in domain.grid(density):
        d = det.eval(pt)
        if abs(d) < worst_val:
            worst_node, worst_val = dict(pt), abs(d)
    if worst_val <= DET_FLOOR:
        raise ControllerSingular(
            f"det Q = {worst_val:.3e} at {worst_node}", node=worst_node, value=worst_val)
    for pt in domain.grid(density):
        Uv = U.eval_at(pt)
        resid = np.abs(K.eval_at(pt) @ Q.eval_at(pt) - Uv).max() if U.rows else 0.0
        if resid > 1e-8 * max(1.0, float(np.abs(Uv).max()) if U.rows else 1.0):
            raise StructuralError(
                f"controller identity K Q = U violated by {resid:.3e} at {dict(pt)}")
    return K


# ---- standalone a posteriori check -------------------------------------------------


def grid_check(result, sys: LpvJumpSystem, grid_density: int | None = None) -> GridReport:
    """Recompute the eigenvalue margins of a certificate on a fresh grid."""
    if isinstance(result, StabilityCertificate):
        return _stability_grid_report(sys, result.P, result.alpha, result.eps, grid_density)
    if isinstance(result, L2Certificate):
        return _l2_grid_report(sys, result.P, result.gamma, result.eps, grid_density)
    if isinstance(result, SynthesisResult):
        # Q, U, Z certify the plant on the clock recorded in the result
        work = sys if result.time_scale == 1.0 else sys.time_scaled(result.time_scale)
        return _synthesis_grid_report(work, result.Q, result.U, result.Z, result.gamma,
                                      result.K, result.kernel_encoding, result.eps,
                                      grid_density)
    raise StructuralError(f"no grid check for {type(result).__name__}")


# ---- SDP export --------------------------------------------------------------------


def build_sdp(sys: LpvJumpSystem, workflow: str, *, alpha: float | None = None,
              gamma: float | None = None, minimize_gamma: bool = False,
              deg_p: int = 2, deg_q: int = 2, deg_u: int | None = None,
              deg_z: int | None = None, deg_mult: int | None = None,
              kernel_encoding: str | None = None, sqrt_kernel: Poly | None = None,
              eps: float = EPS_POS, eps_strict: float = EPS_STRICT,
              time_scale: float | None = None):
    """Compile the SDP one of the three workflows would solve, without solving.

    workflow is "analyze" (fixed alpha), "gain" (fixed gamma, or the gain
    minimization program when gamma is None) or "synthesize".  The returned
    problem is exactly what the internal solver receives: analyze and gain run
    on the domain normalized to the unit box, synthesis on the reparameterized
    clock, so an external solver's verdict on the export is directly
    comparable to ours.
    """
    if workflow == "analyze":
        if alpha is None or alpha < 0.0:
            raise StructuralError("analyze export needs alpha >= 0")
        dm = _default_mult_degree(deg_p) if deg_mult is None else deg_mult
        umap = _UnitBoxMap(sys)
        work = sys if umap.trivial else umap.system
        prog = _stability_program(work, alpha, deg_p, dm, eps, eps_strict)
    elif workflow == "gain":
        if sys.p == 0:
            raise StructuralError("L2 gain needs a disturbance channel (p >= 1)")
        if gamma is not None and gamma <= 0.0:
            raise StructuralError("gamma must be positive")
        dm = _default_mult_degree(deg_p) if deg_mult is None else deg_mult
        umap = _UnitBoxMap(sys)
        work = sys if umap.trivial else umap.system
        prog, _ = _gain_program(work, gamma, deg_p, dm, eps, eps_strict)
    elif workflow == "synthesize":
        if sys.m == 0:
            raise StructuralError("synthesis needs a control channel (m >= 1)")
        if minimize_gamma:
            if gamma is not None:
                raise StructuralError("pass either gamma or minimize_gamma, not both")
            if sys.p == 0:
                raise StructuralError("gamma minimization needs a disturbance channel")
        elif gamma is None:
            if sys.p > 0:
                raise StructuralError("gamma is required unless minimize_gamma is set")
            gamma = 1.0
        elif gamma <= 0.0:
            raise StructuralError("gamma must be positive")
        du = deg_q if deg_u is None else deg_u
        dz = deg_q if deg_z is None else deg_z
        dm = _default_mult_degree(deg_q) if deg_mult is None else deg_mult
        c_time = _auto_time_scale(sys) if time_scale is None else float(time_scale)
        work = sys if c_time == 1.0 else sys.time_scaled(c_time)
        if sqrt_kernel is not None and c_time != 1.0:
            sqrt_kernel = sqrt_kernel * (1.0 / math.sqrt(c_time))
        _, off_poly, diag_poly = _resolve_kernel_encoding(work, kernel_encoding, sqrt_kernel)
        prog, _ = _synthesis_program(work, gamma, minimize_gamma, deg_q, du, dz, dm,
                                     off_poly, diag_poly, eps, eps_strict)
    else:
        raise StructuralError(f"unknown workflow {workflow!r}")
    return prog.compile().problem
