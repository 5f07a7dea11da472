"""Monte Carlo simulation of the piecewise-deterministic jump process.

Between jumps the parameter is frozen and the state follows the linear flow,
integrated by classical fixed-step RK4 with steps shortened to land exactly
on jump times and input discontinuities. Jumps arrive with the exponential
clock Exp(lam_bar(rho)); the destination is drawn by inverse-CDF bisection
for one parameter and by rejection sampling on the box for several.

Randomness: the counter-based Philox generator keyed by the 64-bit seed;
realization i uses the stream Philox(key=seed).jumped(i), so ensembles are
reproducible regardless of execution order.
"""

import bisect as _bisect
import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .analysis import ControllerSingular, LpvJumpSystem, RationalMatrix
from .polyalg import Box, Poly, StructuralError


class SimulationError(RuntimeError):
    """A realization could not be completed (e.g. singular controller)."""


# ---- input signals ---------------------------------------------------------------


class InputSignal:
    """Piecewise-constant disturbance w(t), right-continuous at switch times."""

    def __init__(self, times, values):
        self.times = [float(t) for t in times]
        self.values = [np.atleast_1d(np.asarray(v, dtype=float)) for v in values]
        if not self.times or self.times[0] != 0.0:
            raise StructuralError("input tables must start at t = 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise StructuralError("input table times must be strictly increasing")
        dims = {v.shape for v in self.values}
        if len(dims) != 1:
            raise StructuralError("input table values must share a dimension")
        self.dim = self.values[0].shape[0]

    @classmethod
    def zero(cls, p: int) -> "InputSignal":
        return cls([0.0], [np.zeros(max(p, 1))]) if p else cls([0.0], [np.zeros(1)])

    @classmethod
    def pulse(cls, amplitude, t_off: float, p: int = 1) -> "InputSignal":
        """a * (H(t) - H(t - t_off)): on during [0, t_off), then zero."""
        a = np.atleast_1d(np.asarray(amplitude, dtype=float))
        if a.shape[0] == 1 and p > 1:
            a = np.repeat(a, p)
        if t_off <= 0.0:
            raise StructuralError("pulse switch-off time must be positive")
        return cls([0.0, t_off], [a, np.zeros_like(a)])

    def value(self, t: float) -> np.ndarray:
        k = _bisect.bisect_right(self.times, t) - 1
        return self.values[max(k, 0)]

    def discontinuities(self) -> list[float]:
        return self.times[1:]

    def is_zero(self) -> bool:
        return all(not v.any() for v in self.values)


# ---- configuration and results -----------------------------------------------------


@dataclass
class SimConfig:
    horizon: float
    ode_step: float = 1e-3
    n_realizations: int = 100
    rng_seed: int = 0
    input: InputSignal | None = None
    x0: np.ndarray | None = None
    rho0: dict | None = None  # None: drawn uniformly from the box per realization

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise StructuralError("horizon must be positive")
        if self.ode_step <= 0.0:
            raise StructuralError("ode_step must be positive")
        if self.n_realizations < 1:
            raise StructuralError("need at least one realization")


@dataclass
class ParamTrajectory:
    """Jump times t0 = 0 < t1 < ... with value k holding on [t_k, t_{k+1})."""

    times: list[float] = field(default_factory=list)
    values: list[dict] = field(default_factory=list)

    def append(self, t: float, value: dict, box: Box | None = None) -> None:
        if self.times and t <= self.times[-1]:
            raise StructuralError("jump times must be strictly increasing")
        if box is not None:
            for nm, (lo, hi) in box.intervals.items():
                v = value[nm]
                if not (lo - 1e-12 <= v <= hi + 1e-12):
                    raise StructuralError(f"sampled {nm} = {v} leaves [{lo}, {hi}]")
        self.times.append(float(t))
        self.values.append(dict(value))

    def value_at(self, t: float) -> dict:
        k = _bisect.bisect_right(self.times, t) - 1
        return self.values[max(k, 0)]

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1


@dataclass
class PathResult:
    trajectory: ParamTrajectory
    t: np.ndarray
    x: np.ndarray  # (len(t), n)
    z: np.ndarray  # (len(t), q)
    w: np.ndarray  # (len(t), p)
    z_energy: float
    w_energy: float


@dataclass
class EnsembleStats:
    t: np.ndarray
    mean_x_sq: np.ndarray
    stderr: np.ndarray
    z_energies: np.ndarray
    w_energies: np.ndarray
    n_realizations: int
    gain_estimate: float | None = None
    gain_stderr: float | None = None
    paths: list = field(default_factory=list)


# ---- jump sampling -----------------------------------------------------------------


def _lam_bar_at(kernel: Poly, theta_box: Box, rho: dict) -> float:
    npar = len(kernel.varset) // 2
    theta_names = kernel.varset.names[npar:]
    lam_bar = kernel.integrate_box(theta_names, theta_box)
    return lam_bar.eval(rho)


def sample_jump_time(rho: dict, kernel: Poly, theta_box: Box, rng) -> float:
    """Exp(lam_bar(rho)) waiting time; +inf when the intensity vanishes."""
    rate = _lam_bar_at(kernel, theta_box, rho)
    if rate <= 0.0:
        return math.inf
    u = 1.0 - rng.random()  # in (0, 1]
    return -math.log(u) / rate


def _theta_coefficients(kernel: Poly, rho: dict, npar: int) -> np.ndarray:
    # lambda(rho, .) as a univariate polynomial in the single destination name
    names = kernel.varset.names
    deg = 0
    for mono in kernel.terms:
        deg = max(deg, mono[npar])
    coeffs = np.zeros(deg + 1)
    for mono, c in kernel.terms.items():
        val = c
        for nm, e in zip(names[:npar], mono[:npar]):
            if e:
                val *= rho[nm] ** e
        coeffs[mono[npar]] += val
    return coeffs


def sample_next_param(rho: dict, kernel: Poly, theta_box: Box, rng) -> dict:
    """Draw the destination from the density lambda(rho, .) / lam_bar(rho).

    One parameter: inverse-CDF bisection on the monotone antiderivative to
    |F - nu| <= 1e-12. Several parameters: rejection sampling against the
    grid bound of the density.
    """
    npar = len(kernel.varset) // 2
    names = kernel.varset.names
    theta_names = names[npar:]
    param_names = names[:npar]
    rate = _lam_bar_at(kernel, theta_box, rho)
    if rate <= 0.0:
        raise StructuralError("cannot sample a destination with zero intensity")

    if npar == 1:
        lo, hi = theta_box.intervals[theta_names[0]]
        coeffs = _theta_coefficients(kernel, rho, npar)
        anti = np.concatenate(([0.0], coeffs / np.arange(1, len(coeffs) + 1)))

        def cdf(t):
            return (np.polyval(anti[::-1], t) - np.polyval(anti[::-1], lo)) / rate

        nu = rng.random()
        a, b = lo, hi
        while b - a > 1e-12 * max(1.0, hi - lo):
            mid = 0.5 * (a + b)
            if cdf(mid) < nu:
                a = mid
            else:
                b = mid
        return {param_names[0]: 0.5 * (a + b)}

    # rejection sampling on the box; bound from a coarse grid with headroom
    pts = theta_box.grid(17)
    bound = 1.25 * max(kernel.eval({**rho, **pt}) for pt in pts)
    if bound <= 0.0:
        raise StructuralError("density bound is zero on the sampling grid")
    spans = [theta_box.intervals[nm] for nm in theta_names]
    for _ in range(1_000_000):
        cand = {nm: lo + (hi - lo) * rng.random() for nm, (lo, hi) in zip(theta_names, spans)}
        if bound * rng.random() <= kernel.eval({**rho, **cand}):
            return {pn: cand[tn] for pn, tn in zip(param_names, theta_names)}
    raise SimulationError("rejection sampler failed to accept; check the kernel sign")


# ---- path simulation ---------------------------------------------------------------


def _rk4_step(Acl: np.ndarray, Ew: np.ndarray, x: np.ndarray, h: float) -> np.ndarray:
    k1 = Acl @ x + Ew
    k2 = Acl @ (x + 0.5 * h * k1) + Ew
    k3 = Acl @ (x + 0.5 * h * k2) + Ew
    k4 = Acl @ (x + h * k3) + Ew
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _draw_rho0(sys: LpvJumpSystem, config: SimConfig, rng) -> dict:
    if config.rho0 is not None:
        return dict(config.rho0)
    return {nm: lo + (hi - lo) * rng.random()
            for nm, (lo, hi) in sys.domain.box.intervals.items()}


class _Segment:
    """Frozen-parameter closed-loop data; rebuilt after every jump."""

    def __init__(self, sys: LpvJumpSystem, controller: RationalMatrix | None,
                 rho: dict, t: float):
        A = sys.A.eval_at(rho)
        C = sys.C.eval_at(rho)
        if controller is not None:
            try:
                K = controller.eval_at(rho)
            except ControllerSingular as exc:
                raise SimulationError(
                    f"controller singular at t = {t:.6g}, rho = {rho}") from exc
            A = A + sys.B.eval_at(rho) @ K
            C = C + sys.D.eval_at(rho) @ K
        self.Acl = A
        self.Ccl = C
        self.E = sys.E.eval_at(rho)
        self.F = sys.F.eval_at(rho)

    def output(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        z = self.Ccl @ x
        if self.F.size:
            z = z + self.F @ w
        return z


def simulate_path(sys: LpvJumpSystem, controller: RationalMatrix | None,
                  x0, config: SimConfig, rng) -> PathResult:
    """One realization: exponential jump clocks, exact event landing, RK4 flow."""
    n, p, q = sys.n, sys.p, sys.q
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    signal = config.input if config.input is not None else InputSignal.zero(p)
    if p and signal.dim != p:
        raise StructuralError(f"input signal has dimension {signal.dim}, plant wants {p}")

    T, h = config.horizon, config.ode_step
    n_grid = int(math.ceil(T / h - 1e-9))
    grid = np.minimum(h * np.arange(n_grid + 1), T)
    grid[-1] = T

    rho = _draw_rho0(sys, config, rng)
    traj = ParamTrajectory()
    traj.append(0.0, rho, sys.domain.box)
    seg = _Segment(sys, controller, rho, 0.0)
    next_jump = sample_jump_time(rho, sys.kernel, sys.theta_box, rng)
    discs = [d for d in signal.discontinuities() if d < T]
    disc_idx = 0

    xs = np.empty((n_grid + 1, n))
    zs = np.empty((n_grid + 1, q))
    ws = np.empty((n_grid + 1, p))
    xs[0] = x
    w_now = signal.value(0.0)[:p]
    ws[0] = w_now
    zs[0] = seg.output(x, w_now)
    z_energy = w_energy = 0.0

    t = 0.0
    for k in range(1, n_grid + 1):
        target = grid[k]
        while t < target - 1e-15:
            t_stop = target
            if disc_idx < len(discs) and discs[disc_idx] > t:
                t_stop = min(t_stop, discs[disc_idx])
            t_stop = min(t_stop, next_jump)
            w_mid = signal.value(0.5 * (t + t_stop))[:p]
            z_l = seg.output(x, w_mid)
            x = _rk4_step(seg.Acl, seg.E @ w_mid if p else np.zeros(n), x, t_stop - t)
            z_r = seg.output(x, w_mid)
            dt = t_stop - t
            z_energy += 0.5 * dt * (float(z_l @ z_l) + float(z_r @ z_r))
            w_energy += dt * float(w_mid @ w_mid)
            t = t_stop
            if disc_idx < len(discs) and t == discs[disc_idx]:
                disc_idx += 1
            if t == next_jump:
                rho = sample_next_param(rho, sys.kernel, sys.theta_box, rng)
                traj.append(t, rho, sys.domain.box)
                seg = _Segment(sys, controller, rho, t)
                next_jump = t + sample_jump_time(rho, sys.kernel, sys.theta_box, rng)
        t = target
        xs[k] = x
        w_now = signal.value(t)[:p]
        ws[k] = w_now
        zs[k] = seg.output(x, w_now)

    return PathResult(trajectory=traj, t=grid, x=xs, z=zs, w=ws,
                      z_energy=z_energy, w_energy=w_energy)


def run_ensemble(sys: LpvJumpSystem, controller: RationalMatrix | None,
                 config: SimConfig) -> EnsembleStats:
    """Independent realizations on per-realization Philox streams, reduced in
    realization order."""
    _warn_on_coarse_step(sys, config)
    base = np.random.Philox(key=config.rng_seed)
    paths = []
    for i in range(config.n_realizations):
        rng = np.random.Generator(base.jumped(i))
        paths.append(simulate_path(sys, controller, config.x0, config, rng))

    sq = np.stack([(p.x * p.x).sum(axis=1) for p in paths])
    mean = sq.mean(axis=0)
    nreal = config.n_realizations
    stderr = sq.std(axis=0, ddof=1) / math.sqrt(nreal) if nreal > 1 else np.zeros_like(mean)
    z_en = np.array([p.z_energy for p in paths])
    w_en = np.array([p.w_energy for p in paths])

    gain = gain_se = None
    if w_en.sum() > 0.0:
        ratio = z_en.sum() / w_en.sum()
        gain = math.sqrt(ratio)
        if nreal > 1 and gain > 0.0:
            # delta method on the ratio-of-sums estimator
            w_mean = w_en.mean()
            resid = (z_en - ratio * w_en) / w_mean
            se_ratio = resid.std(ddof=1) / math.sqrt(nreal)
            gain_se = se_ratio / (2.0 * gain)
        else:
            gain_se = 0.0

    return EnsembleStats(t=paths[0].t, mean_x_sq=mean, stderr=stderr,
                         z_energies=z_en, w_energies=w_en, n_realizations=nreal,
                         gain_estimate=gain, gain_stderr=gain_se, paths=paths)


def _warn_on_coarse_step(sys: LpvJumpSystem, config: SimConfig) -> None:
    peak = 0.0
    for pt in sys.domain.grid(9):
        peak = max(peak, sys.lam_bar.eval(pt))
    if peak > 0.0 and config.ode_step > 0.1 / peak:
        warnings.warn(
            f"ode_step {config.ode_step:g} exceeds a tenth of the shortest mean "
            f"inter-jump time {1.0 / peak:g}", RuntimeWarning, stacklevel=3)


# ---- certificate consistency -------------------------------------------------------


def dynkin_check(sys: LpvJumpSystem, P, alpha: float, x0, config: SimConfig):
    """Ensemble E[V(x(t), rho(t))] against the certified envelope
    V(x0, rho0) e^{-2 alpha t} (1 + 3 SE); returns (passed, t, mean_V, envelope).

    rho0 must be pinned in the config so the envelope's starting level is
    well defined.
    """
    if config.rho0 is None:
        raise StructuralError("dynkin_check needs config.rho0 to anchor V(x0, rho0)")
    base = np.random.Philox(key=config.rng_seed)
    vals = []
    for i in range(config.n_realizations):
        rng = np.random.Generator(base.jumped(i))
        path = simulate_path(sys, None, x0, config, rng)
        V = np.empty(len(path.t))
        for k, t in enumerate(path.t):
            rho = path.trajectory.value_at(t)
            V[k] = float(path.x[k] @ P.eval_at(rho) @ path.x[k])
        vals.append(V)
    vals = np.stack(vals)
    mean_V = vals.mean(axis=0)
    n = config.n_realizations
    se = vals.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean_V)
    x0v = np.asarray(x0, dtype=float).reshape(sys.n)
    v0 = float(x0v @ P.eval_at(config.rho0) @ x0v)
    t = simulate_grid(config)
    envelope = v0 * np.exp(-2.0 * alpha * t) + 3.0 * se
    passed = bool(np.all(mean_V <= envelope + 1e-12))
    return passed, t, mean_V, envelope


def simulate_grid(config: SimConfig) -> np.ndarray:
    n_grid = int(math.ceil(config.horizon / config.ode_step - 1e-9))
    grid = np.minimum(config.ode_step * np.arange(n_grid + 1), config.horizon)
    grid[-1] = config.horizon
    return grid


# ---- CSV output --------------------------------------------------------------------


def write_trace_csv(path, sys: LpvJumpSystem, results: list[PathResult]) -> None:
    names = list(sys.param_names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["realization", "t"]
                        + [f"x{i + 1}" for i in range(sys.n)]
                        + names
                        + [f"z{i + 1}" for i in range(sys.q)])
        for r, res in enumerate(results):
            for k, t in enumerate(res.t):
                rho = res.trajectory.value_at(t)
                writer.writerow([r, repr(float(t))]
                                + [repr(float(v)) for v in res.x[k]]
                                + [repr(float(rho[nm])) for nm in names]
                                + [repr(float(v)) for v in res.z[k]])


def write_ensemble_csv(path, stats: EnsembleStats) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mean_x_sq", "stderr"])
        for t, m, s in zip(stats.t, stats.mean_x_sq, stats.stderr):
            writer.writerow([repr(float(t)), repr(float(m)), repr(float(s))])
