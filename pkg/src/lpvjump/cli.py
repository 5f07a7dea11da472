"""Command-line front end: strict JSON problem files in, JSON reports out.

The four workflows (analyze, gain, synthesize, simulate) plus an SDPA export
share one problem-file format.  Every key is validated and unknown keys are
rejected with the JSON path of the offender, so fixture files stay portable.
Matrix entries are numbers, monomial-keyed coefficient maps, or polynomial
strings ("3 - rho + 0.5*rho^2").

Exit codes: 0 feasible / success, 1 infeasible at the requested degrees,
2 usage or structural error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import os
import sys as _sys
import time

import numpy as np

from .analysis import (BisectOptions, ControllerSingular, DecayRateResult,
                       Infeasible, LpvJumpSystem, RationalMatrix, build_sdp,
                       certify_stability, l2_gain_upper_bound, max_decay_rate,
                       synthesize_sf)
from .polyalg import (Box, Poly, PolyMatrix, StructuralError, VarSet,
                      monomial_key, poly_from_coeff_map, poly_from_string)
from .sdpsolve import SdpOptions, write_sdpa
from .simulate import (InputSignal, SimConfig, SimulationError, run_ensemble,
                       write_ensemble_csv, write_trace_csv)
from .sosprog import SemialgebraicSet

SCHEMA_VERSION = "1"
SDP_TOL_ENV = "LPVJUMP_SDP_TOL"
_DEST_SUFFIX = "_next"


# ---- strict schema -----------------------------------------------------------------


def _fail(path: str, msg: str):
    raise StructuralError(f"{path}: {msg}")


def _check_keys(obj, path: str, required, optional=()):
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in required and key not in optional:
            _fail(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in obj:
            _fail(path, f"missing required key {key!r}")


def _number(x, path: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        _fail(path, f"expected a number, got {type(x).__name__}")
    return float(x)


def _integer(x, path: str, minimum: int | None = None) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        _fail(path, f"expected an integer, got {type(x).__name__}")
    if minimum is not None and x < minimum:
        _fail(path, f"must be >= {minimum}")
    return x


def _entry_poly(entry, varset: VarSet, path: str) -> Poly:
    if isinstance(entry, bool):
        _fail(path, "expected a polynomial entry, got a boolean")
    if isinstance(entry, (int, float)):
        return Poly.constant(varset, float(entry))
    try:
        if isinstance(entry, str):
            return poly_from_string(entry, varset)
        if isinstance(entry, dict):
            return poly_from_coeff_map(entry, varset)
    except StructuralError as exc:
        _fail(path, str(exc))
    _fail(path, f"expected a number, polynomial string, or coefficient map, "
                f"got {type(entry).__name__}")


def _parse_matrix(obj, rows: int, cols: int, varset: VarSet, path: str) -> PolyMatrix:
    if not isinstance(obj, list):
        _fail(path, "expected a list of rows")
    if len(obj) != rows:
        _fail(path, f"expected {rows} rows, got {len(obj)}")
    out = []
    for i, row in enumerate(obj):
        if not isinstance(row, list):
            _fail(f"{path}[{i}]", "expected a list of entries")
        if len(row) != cols:
            _fail(f"{path}[{i}]", f"expected {cols} entries, got {len(row)}")
        out.append([_entry_poly(e, varset, f"{path}[{i}][{j}]")
                    for j, e in enumerate(row)])
    return PolyMatrix.from_rows(out, varset)


def _parse_dimensions(obj) -> tuple[int, int, int, int]:
    _check_keys(obj, "dimensions", required=("n",), optional=("m", "p", "q"))
    n = _integer(obj["n"], "dimensions.n", minimum=1)
    m = _integer(obj.get("m", 0), "dimensions.m", minimum=0)
    p = _integer(obj.get("p", 0), "dimensions.p", minimum=0)
    q = _integer(obj.get("q", 0), "dimensions.q", minimum=0)
    return n, m, p, q


def _parse_domain(obj) -> SemialgebraicSet:
    _check_keys(obj, "domain", required=("box",), optional=("constraints",))
    bx = obj["box"]
    if not isinstance(bx, dict) or not bx:
        _fail("domain.box", "expected a nonempty object of name: [lo, hi]")
    intervals = {}
    for nm, iv in bx.items():
        pth = f"domain.box.{nm}"
        if not isinstance(iv, list) or len(iv) != 2:
            _fail(pth, "expected [lo, hi]")
        intervals[nm] = (_number(iv[0], pth), _number(iv[1], pth))
    try:
        box = Box(intervals)  # key order fixes the variable order
        varset = VarSet(box.names)
    except StructuralError as exc:
        _fail("domain.box", str(exc))
    cons = obj.get("constraints", [])
    if not isinstance(cons, list):
        _fail("domain.constraints", "expected a list")
    extra = [_entry_poly(entry, varset, f"domain.constraints[{k}]")
             for k, entry in enumerate(cons)]
    return SemialgebraicSet(box, varset, extra)


def _parse_kernel(obj, params: VarSet) -> Poly:
    _check_keys(obj, "kernel", required=(),
                optional=("constant", "coefficients", "poly", "destinations"))
    forms = [k for k in ("constant", "coefficients", "poly") if k in obj]
    if len(forms) != 1:
        _fail("kernel", "give exactly one of 'constant', 'coefficients', 'poly'")
    dests = obj.get("destinations")
    if dests is None:
        dests = [nm + _DEST_SUFFIX for nm in params.names]
    else:
        if not isinstance(dests, list) or len(dests) != len(params.names):
            _fail("kernel.destinations",
                  f"expected a list of {len(params.names)} destination names")
        for k, nm in enumerate(dests):
            if not isinstance(nm, str):
                _fail(f"kernel.destinations[{k}]", "expected a string")
    try:
        full = VarSet(list(params.names) + list(dests))
    except StructuralError as exc:
        _fail("kernel.destinations", str(exc))
    if forms[0] == "constant":
        return Poly.constant(full, _number(obj["constant"], "kernel.constant"))
    return _entry_poly(obj[forms[0]], full, f"kernel.{forms[0]}")


# options are typed but parsed lazily where varsets are needed (sqrt_kernel)
_OPTION_SPECS = {
    "deg_p": "int", "deg_mult": "int", "deg_q": "int", "deg_u": "int", "deg_z": "int",
    "eps": "num", "eps_strict": "num", "bisect_tol": "num",
    "alpha": "num", "gamma": "num",
    "kernel_encoding": "str", "sqrt_kernel": "poly",
    "seed": "int", "n_realizations": "int",
    "horizon": "num", "ode_step": "num",
    "sdp_tol": "num", "time_scale": "num",
}


def _parse_options(obj) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        _fail("options", "expected an object")
    out = {}
    for key, val in obj.items():
        spec = _OPTION_SPECS.get(key)
        pth = f"options.{key}"
        if spec is None:
            _fail(pth, "unknown key")
        if spec == "int":
            out[key] = _integer(val, pth, minimum=0)
        elif spec == "num":
            out[key] = _number(val, pth)
        elif spec == "str":
            if not isinstance(val, str):
                _fail(pth, "expected a string")
            out[key] = val
        else:  # poly: keep raw, parsed against the kernel varset at use time
            if not isinstance(val, (str, dict)):
                _fail(pth, "expected a polynomial string or coefficient map")
            out[key] = val
    return out


def parse_problem(doc) -> tuple[LpvJumpSystem, dict]:
    """Validate a problem document and build the system it describes."""
    _check_keys(doc, "$", required=("dimensions", "matrices", "domain", "kernel"),
                optional=("options",))
    n, m, p, q = _parse_dimensions(doc["dimensions"])
    domain = _parse_domain(doc["domain"])
    vs = domain.varset
    mats = doc["matrices"]
    _check_keys(mats, "matrices", required=("A",),
                optional=("B", "C", "D", "E", "F"))
    shapes = {"A": (n, n), "B": (n, m), "C": (q, n),
              "D": (q, m), "E": (n, p), "F": (q, p)}
    parsed = {}
    for nm, (r, c) in shapes.items():
        if nm in mats:
            if r == 0 or c == 0:
                _fail(f"matrices.{nm}",
                      f"channel has size zero ({r}x{c}); omit this matrix")
            parsed[nm] = _parse_matrix(mats[nm], r, c, vs, f"matrices.{nm}")
        else:
            parsed[nm] = PolyMatrix.zeros(r, c, vs)
    kernel = _parse_kernel(doc["kernel"], vs)
    options = _parse_options(doc.get("options"))
    return LpvJumpSystem(parsed["A"], domain, kernel, B=parsed["B"], C=parsed["C"],
                         D=parsed["D"], E=parsed["E"], F=parsed["F"]), options


def load_problem(path: str) -> tuple[LpvJumpSystem, dict, str]:
    """Read, hash, and parse a problem file; returns (system, options, sha256)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise StructuralError(f"cannot read {path}: {exc}")
    digest = hashlib.sha256(raw).hexdigest()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise StructuralError(f"{path}: not valid JSON ({exc})")
    sysm, options = parse_problem(doc)
    return sysm, options, digest


# ---- JSON serialization -------------------------------------------------------------


def _poly_json(p: Poly) -> dict:
    return {monomial_key(p.varset, mono): float(c)
            for mono, c in sorted(p.terms.items())}


def _matrix_json(M: PolyMatrix) -> list:
    return [[_poly_json(M.entry(i, j)) for j in range(M.cols)]
            for i in range(M.rows)]


def _grid_json(report) -> dict:
    return {
        "density": report.density,
        "passed": report.passed,
        "margins": {it.label: float(it.min_margin) for it in report.items},
        "advisory": [it.label for it in report.items if it.advisory],
    }


def _p_cert_json(cert, level_key: str, level: float) -> dict:
    return {
        "variables": list(cert.P.varset.names),
        level_key: level,
        "degree": cert.degree,
        "eps": cert.eps,
        "eps_strict": cert.eps_strict,
        "P": _matrix_json(cert.P),
        "multipliers_pos": [_matrix_json(M) for M in cert.multipliers_pos],
        "multipliers_lmi": [_matrix_json(M) for M in cert.multipliers_lmi],
    }


def _stability_cert_json(cert) -> dict:
    return _p_cert_json(cert, "alpha", cert.alpha)


def _gain_cert_json(cert) -> dict:
    return _p_cert_json(cert, "gamma", cert.gamma)


def _synthesis_cert_json(res) -> dict:
    return {
        "variables": list(res.Q.varset.names),
        "jump_variables": list(res.Z.varset.names[len(res.Q.varset.names):]),
        "gamma": res.gamma,
        "kernel_encoding": res.kernel_encoding,
        "time_scale": res.time_scale,
        "degree": res.degree,
        "eps": res.eps,
        "eps_strict": res.eps_strict,
        "Q": _matrix_json(res.Q),
        "U": _matrix_json(res.U),
        "Z": _matrix_json(res.Z),
    }


def save_controller(path: str, res, problem_sha: str) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "variables": list(res.K.varset.names),
        "m": res.K.shape[0],
        "n": res.K.shape[1],
        "numerator": _matrix_json(res.K.numerator),
        "denominator": _poly_json(res.K.denominator),
        "gamma": res.gamma,
        "source": {
            "problem_sha256": problem_sha,
            "kernel_encoding": res.kernel_encoding,
            "time_scale": res.time_scale,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_controller(path: str) -> RationalMatrix:
    try:
        with open(path, "rb") as fh:
            doc = json.loads(fh.read().decode("utf-8"))
    except OSError as exc:
        raise StructuralError(f"cannot read {path}: {exc}")
    except (UnicodeDecodeError, ValueError) as exc:
        raise StructuralError(f"{path}: not valid JSON ({exc})")
    _check_keys(doc, "controller",
                required=("schema_version", "variables", "m", "n",
                          "numerator", "denominator"),
                optional=("gamma", "source"))
    if doc["schema_version"] != SCHEMA_VERSION:
        _fail("controller.schema_version",
              f"unsupported version {doc['schema_version']!r}")
    names = doc["variables"]
    if not isinstance(names, list) or not all(isinstance(v, str) for v in names):
        _fail("controller.variables", "expected a list of names")
    vs = VarSet(names)
    m = _integer(doc["m"], "controller.m", minimum=1)
    n = _integer(doc["n"], "controller.n", minimum=1)
    num = _parse_matrix(doc["numerator"], m, n, vs, "controller.numerator")
    den = _entry_poly(doc["denominator"], vs, "controller.denominator")
    return RationalMatrix(num, den)


# ---- shared command plumbing --------------------------------------------------------


_EXIT_BY_VERDICT = {"feasible": 0, "infeasible": 1, "numerical_failure": 3}


def _resolve(flag_value, options: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    return options.get(key, default)


def _sdp_options(options: dict) -> SdpOptions | None:
    tol = options.get("sdp_tol")
    if tol is None:
        raw = os.environ.get(SDP_TOL_ENV)
        if raw:
            try:
                tol = float(raw)
            except ValueError:
                raise StructuralError(f"{SDP_TOL_ENV} must be a number, got {raw!r}")
    if tol is None:
        return None
    if tol <= 0.0:
        raise StructuralError("SDP tolerance must be positive")
    return SdpOptions(tol_primal=tol, tol_dual=tol, tol_gap=tol)


def _emit(report: dict, save_path: str | None) -> None:
    text = json.dumps(report, indent=2)
    if save_path:
        with open(save_path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _base_report(command: str, path: str, digest: str, options_used: dict,
                 started: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "input": {"path": path, "sha256": digest},
        "options": options_used,
        "wall_clock_s": round(time.perf_counter() - started, 6),
    }


def _infeasible_sections(res: Infeasible) -> dict:
    return {
        "verdict": res.kind,
        "results": {"message": res.message, "degree": res.degree,
                    "alpha": res.alpha, "gamma": res.gamma},
        "certificate": None,
        "solver": res.solver_info,
    }


# ---- commands -----------------------------------------------------------------------


def cmd_analyze(args) -> int:
    started = time.perf_counter()
    sysm, fopts, digest = load_problem(args.problem)
    if args.alpha is not None and args.maximize_alpha:
        raise StructuralError("pass either --alpha or --maximize-alpha, not both")
    deg_p = _resolve(args.deg_p, fopts, "deg_p", 2)
    deg_mult = _resolve(args.deg_mult, fopts, "deg_mult", None)
    eps = _resolve(args.eps, fopts, "eps", 1e-4)
    sdp = _sdp_options(fopts)
    alpha = args.alpha if args.alpha is not None else fopts.get("alpha")
    maximize = args.maximize_alpha or alpha is None
    used = {"deg_p": deg_p, "deg_mult": deg_mult, "eps": eps,
            "mode": "maximize_alpha" if maximize else "fixed_alpha"}

    if maximize:
        tol = _resolve(args.bisect_tol, fopts, "bisect_tol", 1e-3)
        used["bisect_tol"] = tol
        res = max_decay_rate(sysm, deg_p, deg_mult, BisectOptions(tol=tol),
                             eps=eps, sdp_options=sdp)
        report = _base_report("analyze", args.problem, digest, used, started)
        if isinstance(res, Infeasible):
            report.update(_infeasible_sections(res))
            _emit(report, args.report)
            return _EXIT_BY_VERDICT[res.kind]
        cert = res.certificate
        report.update({
            "verdict": "feasible",
            "results": {"alpha_star": res.alpha,
                        "history": [[a, v] for a, v in res.history],
                        "warnings": list(res.warnings),
                        "grid": _grid_json(cert.grid_report)},
            "certificate": _stability_cert_json(cert),
            "solver": cert.solver_info,
        })
        _emit(report, args.report)
        return 0

    used["alpha"] = alpha
    res = certify_stability(sysm, alpha, deg_p, deg_mult, eps=eps, sdp_options=sdp)
    report = _base_report("analyze", args.problem, digest, used, started)
    if isinstance(res, Infeasible):
        report.update(_infeasible_sections(res))
        _emit(report, args.report)
        return _EXIT_BY_VERDICT[res.kind]
    report.update({
        "verdict": "feasible",
        "results": {"alpha": res.alpha, "grid": _grid_json(res.grid_report)},
        "certificate": _stability_cert_json(res),
        "solver": res.solver_info,
    })
    _emit(report, args.report)
    return 0


def cmd_gain(args) -> int:
    started = time.perf_counter()
    sysm, fopts, digest = load_problem(args.problem)
    deg_p = _resolve(args.deg_p, fopts, "deg_p", 2)
    deg_mult = _resolve(args.deg_mult, fopts, "deg_mult", None)
    eps = _resolve(args.eps, fopts, "eps", 1e-4)
    sdp = _sdp_options(fopts)
    gamma = args.gamma if args.gamma is not None else fopts.get("gamma")
    used = {"deg_p": deg_p, "deg_mult": deg_mult, "eps": eps,
            "mode": "fixed_gamma" if gamma is not None else "minimize_gamma"}
    if gamma is not None:
        used["gamma"] = gamma

    res = l2_gain_upper_bound(sysm, deg_p, deg_mult, gamma, eps=eps, sdp_options=sdp)
    report = _base_report("gain", args.problem, digest, used, started)
    if isinstance(res, Infeasible):
        report.update(_infeasible_sections(res))
        _emit(report, args.report)
        return _EXIT_BY_VERDICT[res.kind]
    key = "gamma" if gamma is not None else "gamma_star"
    report.update({
        "verdict": "feasible",
        "results": {key: res.gamma, "grid": _grid_json(res.grid_report)},
        "certificate": _gain_cert_json(res),
        "solver": res.solver_info,
    })
    _emit(report, args.report)
    return 0


def _default_controller_path(problem_path: str) -> str:
    stem, _ = os.path.splitext(problem_path)
    return stem + ".controller.json"


def cmd_synthesize(args) -> int:
    started = time.perf_counter()
    sysm, fopts, digest = load_problem(args.problem)
    deg_q = _resolve(args.deg_q, fopts, "deg_q", 2)
    deg_u = _resolve(args.deg_u, fopts, "deg_u", None)
    deg_z = _resolve(args.deg_z, fopts, "deg_z", None)
    deg_mult = _resolve(args.deg_mult, fopts, "deg_mult", None)
    eps = _resolve(args.eps, fopts, "eps", 1e-4)
    encoding = _resolve(args.kernel_encoding, fopts, "kernel_encoding", None)
    sdp = _sdp_options(fopts)
    gamma = args.gamma if args.gamma is not None else fopts.get("gamma")
    if args.minimize_gamma:
        gamma = None
    sqrt_kernel = None
    if "sqrt_kernel" in fopts:
        sqrt_kernel = _entry_poly(fopts["sqrt_kernel"], sysm.kernel.varset,
                                  "options.sqrt_kernel")
    used = {"deg_q": deg_q, "deg_u": deg_u, "deg_z": deg_z, "deg_mult": deg_mult,
            "eps": eps, "kernel_encoding": encoding,
            "mode": "minimize_gamma" if args.minimize_gamma else "fixed_gamma"}
    if gamma is not None:
        used["gamma"] = gamma

    res = synthesize_sf(sysm, gamma, minimize_gamma=args.minimize_gamma,
                        deg_q=deg_q, deg_u=deg_u, deg_z=deg_z, deg_mult=deg_mult,
                        kernel_encoding=encoding, sqrt_kernel=sqrt_kernel,
                        eps=eps, sdp_options=sdp,
                        time_scale=fopts.get("time_scale"))
    report = _base_report("synthesize", args.problem, digest, used, started)
    if isinstance(res, Infeasible):
        report.update(_infeasible_sections(res))
        _emit(report, args.report)
        return _EXIT_BY_VERDICT[res.kind]

    controller_path = args.controller_out or _default_controller_path(args.problem)
    save_controller(controller_path, res, digest)
    num_deg = max((res.K.numerator.entry(i, j).degree()
                   for i in range(res.K.shape[0])
                   for j in range(res.K.shape[1])), default=0.0)
    num_deg = int(num_deg) if num_deg > 0 else 0  # -inf for all-zero entries
    den_deg = res.K.denominator.degree()
    den_deg = int(den_deg) if den_deg > 0 else 0
    report.update({
        "verdict": "feasible",
        "results": {
            "gamma": res.gamma,
            "kernel_encoding": res.kernel_encoding,
            "time_scale": res.time_scale,
            "grid": _grid_json(res.grid_report),
            "controller": {"path": controller_path,
                           "numerator_degree": num_deg,
                           "denominator_degree": den_deg},
        },
        "certificate": _synthesis_cert_json(res),
        "solver": res.solver_info,
    })
    _emit(report, args.report)
    return 0


def _parse_x0(text: str, n: int) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise StructuralError(f"--x0 must be comma-separated numbers, got {text!r}")
    if len(vals) != n:
        raise StructuralError(f"--x0 has {len(vals)} entries, state dimension is {n}")
    return np.array(vals)


def _parse_input(spec: str, p: int) -> InputSignal:
    if p == 0:
        raise StructuralError("this plant has no disturbance channel; drop --input")
    if spec == "zero":
        return InputSignal.zero(p)
    if spec.startswith("pulse:"):
        parts = spec[len("pulse:"):].split(",")
        if len(parts) != 2:
            raise StructuralError(
                f"--input pulse wants 'pulse:amplitude,t_off', got {spec!r}")
        try:
            amp, t_off = float(parts[0]), float(parts[1])
        except ValueError:
            raise StructuralError(f"non-numeric pulse parameters in {spec!r}")
        return InputSignal.pulse(amp, t_off, p)
    raise StructuralError(
        f"unknown input spec {spec!r}; use 'zero' or 'pulse:amplitude,t_off'")


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    sysm, fopts, digest = load_problem(args.problem)
    controller = load_controller(args.controller) if args.controller else None
    if controller is not None:
        if sysm.m == 0:
            raise StructuralError("plant has no control channel; drop --controller")
        if controller.shape != (sysm.m, sysm.n):
            raise StructuralError(
                f"controller is {controller.shape[0]}x{controller.shape[1]}, "
                f"plant wants {sysm.m}x{sysm.n}")
    horizon = _resolve(args.horizon, fopts, "horizon", 1.0)
    step = _resolve(args.step, fopts, "ode_step", 1e-3)
    n_real = _resolve(args.n, fopts, "n_realizations", 100)
    seed = _resolve(args.seed, fopts, "seed", 0)
    x0 = _parse_x0(args.x0, sysm.n) if args.x0 else None
    signal = _parse_input(args.input, sysm.p) if args.input else None
    config = SimConfig(horizon=horizon, ode_step=step, n_realizations=n_real,
                       rng_seed=seed, input=signal, x0=x0)
    stats = run_ensemble(sysm, controller, config)

    prefix = args.out or "sim"
    ensemble_path = f"{prefix}_ensemble.csv"
    traces_path = f"{prefix}_traces.csv"
    write_ensemble_csv(ensemble_path, stats)
    write_trace_csv(traces_path, sysm, stats.paths)

    mean0 = float(stats.mean_x_sq[0])
    mean1 = float(stats.mean_x_sq[-1])
    used = {"horizon": horizon, "ode_step": step, "n_realizations": n_real,
            "seed": seed, "x0": args.x0, "input": args.input,
            "controller": args.controller}
    report = _base_report("simulate", args.problem, digest, used, started)
    report.update({
        "verdict": "feasible",
        "results": {
            "mean_sq_initial": mean0,
            "mean_sq_final": mean1,
            "decay_ratio": (mean0 / mean1) if mean1 > 0.0 else None,
            "gain_estimate": stats.gain_estimate,
            "gain_stderr": stats.gain_stderr,
            "mean_jumps": float(np.mean([p.trajectory.n_jumps for p in stats.paths])),
            "files": {"ensemble": ensemble_path, "traces": traces_path},
        },
    })
    _emit(report, args.report)
    return 0


def cmd_export_sdp(args) -> int:
    started = time.perf_counter()
    sysm, fopts, digest = load_problem(args.problem)
    alpha = args.alpha if args.alpha is not None else fopts.get("alpha")
    gamma = args.gamma if args.gamma is not None else fopts.get("gamma")
    if args.minimize_gamma:
        gamma = None
    sqrt_kernel = None
    if "sqrt_kernel" in fopts:
        sqrt_kernel = _entry_poly(fopts["sqrt_kernel"], sysm.kernel.varset,
                                  "options.sqrt_kernel")
    problem = build_sdp(
        sysm, args.workflow, alpha=alpha, gamma=gamma,
        minimize_gamma=args.minimize_gamma,
        deg_p=_resolve(args.deg_p, fopts, "deg_p", 2),
        deg_q=_resolve(args.deg_q, fopts, "deg_q", 2),
        deg_u=_resolve(args.deg_u, fopts, "deg_u", None),
        deg_z=_resolve(args.deg_z, fopts, "deg_z", None),
        deg_mult=_resolve(args.deg_mult, fopts, "deg_mult", None),
        kernel_encoding=_resolve(args.kernel_encoding, fopts, "kernel_encoding", None),
        sqrt_kernel=sqrt_kernel,
        eps=_resolve(args.eps, fopts, "eps", 1e-4),
        time_scale=fopts.get("time_scale"),
    )
    write_sdpa(problem, args.out,
               comment=f"lpvjump {args.workflow} sha256:{digest[:16]}")
    used = {"workflow": args.workflow, "alpha": alpha, "gamma": gamma,
            "minimize_gamma": args.minimize_gamma}
    report = _base_report("export-sdp", args.problem, digest, used, started)
    report.update({
        "verdict": "feasible",
        "results": {"path": args.out, "rows": len(problem.b),
                    "blocks": list(problem.block_sizes)},
    })
    _emit(report, args.report)
    return 0


# ---- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lpvjump",
        description="Certification and synthesis for LPV systems whose "
                    "parameters jump at Poissonian random times.")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("problem", help="JSON problem file")
    common.add_argument("--report", help="also save the JSON report to this path")

    pa = sub.add_parser("analyze", parents=[common],
                        help="mean-square decay-rate certification")
    pa.add_argument("--alpha", type=float, help="certify this fixed decay rate")
    pa.add_argument("--maximize-alpha", action="store_true",
                    help="bisect for the largest certifiable rate (default)")
    pa.add_argument("--deg-p", type=int, dest="deg_p")
    pa.add_argument("--deg-mult", type=int, dest="deg_mult")
    pa.add_argument("--eps", type=float)
    pa.add_argument("--bisect-tol", type=float, dest="bisect_tol")
    pa.set_defaults(func=cmd_analyze)

    pg = sub.add_parser("gain", parents=[common],
                        help="stochastic L2-gain bound")
    pg.add_argument("--gamma", type=float,
                    help="check this fixed level instead of minimizing")
    pg.add_argument("--deg-p", type=int, dest="deg_p")
    pg.add_argument("--deg-mult", type=int, dest="deg_mult")
    pg.add_argument("--eps", type=float)
    pg.set_defaults(func=cmd_gain)

    ps = sub.add_parser("synthesize", parents=[common],
                        help="gain-scheduled state-feedback synthesis")
    ps.add_argument("--gamma", type=float, help="fixed closed-loop gain level")
    ps.add_argument("--minimize-gamma", action="store_true")
    ps.add_argument("--deg-q", type=int, dest="deg_q")
    ps.add_argument("--deg-u", type=int, dest="deg_u")
    ps.add_argument("--deg-z", type=int, dest="deg_z")
    ps.add_argument("--deg-mult", type=int, dest="deg_mult")
    ps.add_argument("--kernel-encoding", dest="kernel_encoding",
                    choices=["constant", "square", "scaled"])
    ps.add_argument("--eps", type=float)
    ps.add_argument("--controller-out", dest="controller_out",
                    help="controller JSON path (default: <problem>.controller.json)")
    ps.set_defaults(func=cmd_synthesize)

    pm = sub.add_parser("simulate", parents=[common],
                        help="Monte Carlo ensemble of the jump process")
    pm.add_argument("--controller", help="close the loop with this controller JSON")
    pm.add_argument("--x0", help="initial state, comma separated: -2,4")
    pm.add_argument("--input", help="'zero' or 'pulse:amplitude,t_off'")
    pm.add_argument("--n", type=int, help="number of realizations")
    pm.add_argument("--seed", type=int)
    pm.add_argument("--horizon", type=float)
    pm.add_argument("--step", type=float, help="ODE step size")
    pm.add_argument("--out", help="CSV path prefix (default 'sim')")
    pm.set_defaults(func=cmd_simulate)

    pe = sub.add_parser("export-sdp", parents=[common],
                        help="write the workflow's SDP in SDPA sparse format")
    pe.add_argument("workflow", choices=["analyze", "gain", "synthesize"])
    pe.add_argument("out", help="output .dat-s path")
    pe.add_argument("--alpha", type=float)
    pe.add_argument("--gamma", type=float)
    pe.add_argument("--minimize-gamma", action="store_true")
    pe.add_argument("--deg-p", type=int, dest="deg_p")
    pe.add_argument("--deg-q", type=int, dest="deg_q")
    pe.add_argument("--deg-u", type=int, dest="deg_u")
    pe.add_argument("--deg-z", type=int, dest="deg_z")
    pe.add_argument("--deg-mult", type=int, dest="deg_mult")
    pe.add_argument("--kernel-encoding", dest="kernel_encoding",
                    choices=["constant", "square", "scaled"])
    pe.add_argument("--eps", type=float)
    pe.set_defaults(func=cmd_export_sdp)
    return ap


def _fuse_x0(argv: list[str]) -> list[str]:
    # argparse reads "-2,4" as an option; fuse it into --x0=-2,4
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--x0" and i + 1 < len(argv):
            out.append("--x0=" + argv[i + 1])
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    argv = list(_sys.argv[1:]) if argv is None else list(argv)
    args = build_parser().parse_args(_fuse_x0(argv))
    try:
        return args.func(args)
    except StructuralError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    except (SimulationError, ControllerSingular) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 3


if __name__ == "__main__":
    _sys.exit(main())
