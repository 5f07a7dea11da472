"""Tests for the Monte Carlo simulator.

Ground truth: closed-form exponentials for the flow (RK4 must hit them to
discretization error), analytic laws for the samplers (exponential clock
means, uniform and square-root inverse-CDF destinations, Poisson jump
counts), and scipy's KS / chi-square tests as distribution oracles.
"""

import csv
import math

import numpy as np
import pytest
from scipy import stats

from lpvjump.analysis import LpvJumpSystem, certify_stability
from lpvjump.polyalg import Box, Poly, PolyMatrix, StructuralError, VarSet
from lpvjump.simulate import (
    EnsembleStats,
    InputSignal,
    ParamTrajectory,
    SimConfig,
    dynkin_check,
    run_ensemble,
    sample_jump_time,
    sample_next_param,
    simulate_path,
    write_ensemble_csv,
    write_trace_csv,
)

VS_R = VarSet(["rho"])
VS_RT = VarSet(["rho", "theta"])
RHO = Poly.variable(VS_R, "rho")
ONE = Poly.constant(VS_R, 1.0)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def jump_system(a_poly, lam0, rho_hi, **kwargs):
    A = PolyMatrix.from_rows([[a_poly]], VS_R)
    return LpvJumpSystem(A, Box({"rho": (0.0, rho_hi)}),
                         Poly.constant(VS_RT, lam0), **kwargs)


class _FixedUniform:
    """Stand-in rng whose uniform draws are pinned."""

    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


class TestJumpClock:
    def test_fast_kernel_mean_waiting_time(self):
        kernel = Poly.constant(VS_RT, 100.0)
        box = Box({"theta": (0.0, 1.0)})
        g = rng(3)
        draws = [sample_jump_time({"rho": 0.5}, kernel, box, g) for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(0.01, rel=0.01)

    def test_rate_integrates_the_kernel(self):
        # lambda0 = 1 on [0, 5] gives lam_bar = 5, mean 0.2
        kernel = Poly.constant(VS_RT, 1.0)
        box = Box({"theta": (0.0, 5.0)})
        g = rng(4)
        draws = [sample_jump_time({"rho": 1.0}, kernel, box, g) for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(0.2, rel=0.01)

    def test_zero_intensity_sentinel(self):
        kernel = Poly.zero(VS_RT)
        assert sample_jump_time({"rho": 0.3}, kernel, Box({"theta": (0.0, 1.0)}),
                                rng()) == math.inf


class TestDestinationSampler:
    def test_constant_kernel_is_uniform(self):
        kernel = Poly.constant(VS_RT, 2.0)
        box = Box({"theta": (0.0, 3.0)})
        g = rng(5)
        draws = [sample_next_param({"rho": 1.0}, kernel, box, g)["rho"]
                 for _ in range(10_000)]
        res = stats.kstest(draws, stats.uniform(loc=0.0, scale=3.0).cdf)
        assert res.pvalue > 0.01
        assert min(draws) >= 0.0 and max(draws) <= 3.0

    def test_linear_density_has_square_root_law(self):
        # lambda(rho, theta) = theta on [0, 1]: F = theta^2, mean 2/3
        kernel = Poly(VS_RT, {(0, 1): 1.0})
        box = Box({"theta": (0.0, 1.0)})
        g = rng(6)
        draws = [sample_next_param({"rho": 0.2}, kernel, box, g)["rho"]
                 for _ in range(10_000)]
        assert np.mean(draws) == pytest.approx(2.0 / 3.0, rel=0.01)
        res = stats.kstest(draws, lambda t: np.clip(t, 0, 1) ** 2)
        assert res.pvalue > 0.01

    def test_zero_quantile_is_the_lower_endpoint(self):
        kernel = Poly.constant(VS_RT, 1.0)
        box = Box({"theta": (0.25, 2.0)})
        out = sample_next_param({"rho": 1.0}, kernel, box, _FixedUniform(0.0))
        assert out["rho"] == pytest.approx(0.25, abs=1e-9)

    def test_two_parameter_rejection_sampling(self):
        vs = VarSet(["a", "b", "u", "v"])
        kernel = Poly.constant(vs, 1.5)
        box = Box({"u": (0.0, 2.0), "v": (-1.0, 1.0)})
        g = rng(7)
        draws = [sample_next_param({"a": 0.1, "b": 0.1}, kernel, box, g)
                 for _ in range(4_000)]
        aa = np.array([d["a"] for d in draws])
        bb = np.array([d["b"] for d in draws])
        assert aa.min() >= 0.0 and aa.max() <= 2.0
        assert bb.min() >= -1.0 and bb.max() <= 1.0
        assert aa.mean() == pytest.approx(1.0, abs=0.05)
        assert bb.mean() == pytest.approx(0.0, abs=0.05)

    def test_zero_intensity_rejected(self):
        with pytest.raises(StructuralError):
            sample_next_param({"rho": 0.5}, Poly.zero(VS_RT),
                              Box({"theta": (0.0, 1.0)}), rng())


class TestPoissonCounts:
    def test_jump_counts_follow_poisson(self):
        # lam_bar = 5 over unit horizon: counts ~ Poisson(5)
        kernel = Poly.constant(VS_RT, 1.0)
        box = Box({"theta": (0.0, 5.0)})
        g = rng(8)
        counts = np.zeros(10_000, dtype=int)
        for i in range(counts.size):
            t = 0.0
            while True:
                t += sample_jump_time({"rho": 1.0}, kernel, box, g)
                if t >= 1.0:
                    break
                counts[i] += 1
        kmax = 12
        observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
        expected = np.array([stats.poisson.pmf(k, 5.0) for k in range(kmax)]
                            + [stats.poisson.sf(kmax - 1, 5.0)]) * counts.size
        res = stats.chisquare(observed, expected)
        assert res.pvalue > 0.01


class TestPathIntegration:
    def test_exponential_flow_oracle(self):
        sys = jump_system(-ONE, 5.0, 1.0)
        x0 = np.array([1.0])
        cfg = SimConfig(horizon=1.0, ode_step=1e-3, x0=x0)
        path = simulate_path(sys, None, x0, cfg, rng(9))
        # jumps change rho only; A is constant so the flow is exact e^{-t}
        assert abs(path.x[-1, 0] - math.exp(-1.0)) < 1e-10

    def test_zero_everything_stays_zero(self):
        sys = jump_system(-ONE, 2.0, 1.0)
        cfg = SimConfig(horizon=0.5, ode_step=1e-3)
        path = simulate_path(sys, None, None, cfg, rng(10))
        assert not path.x.any()
        assert path.z_energy == 0.0

    def test_pulse_input_closed_form(self):
        # x' = -x + w, w = H(t) - H(t - 1/2): rise then decay, both closed form
        sys = jump_system(-ONE, 1.0, 1.0, E=PolyMatrix.from_rows([[ONE]], VS_R))
        cfg = SimConfig(horizon=1.0, ode_step=1e-3, x0=np.zeros(1),
                        input=InputSignal.pulse(1.0, 0.5))
        path = simulate_path(sys, None, cfg.x0, cfg, rng(11))
        t = path.t
        x_half = 1.0 - math.exp(-0.5)
        want = np.where(t <= 0.5, 1.0 - np.exp(-t), x_half * np.exp(-(t - 0.5)))
        assert np.abs(path.x[:, 0] - want).max() < 1e-8

    def test_w_energy_matches_the_pulse(self):
        sys = jump_system(-ONE, 1.0, 1.0, E=PolyMatrix.from_rows([[ONE]], VS_R))
        cfg = SimConfig(horizon=2.0, ode_step=1e-3, x0=np.zeros(1),
                        input=InputSignal.pulse(10.0, 1.0))
        path = simulate_path(sys, None, cfg.x0, cfg, rng(12))
        assert path.w_energy == pytest.approx(100.0, rel=1e-9)

    def test_trajectory_times_increase_and_stay_in_box(self):
        sys = jump_system(-ONE, 50.0, 2.0)
        cfg = SimConfig(horizon=1.0, ode_step=1e-3, x0=np.ones(1))
        path = simulate_path(sys, None, cfg.x0, cfg, rng(13))
        assert path.trajectory.n_jumps > 10
        times = path.trajectory.times
        assert all(b > a for a, b in zip(times, times[1:]))
        assert all(0.0 <= v["rho"] <= 2.0 for v in path.trajectory.values)

    def test_pinned_initial_parameter(self):
        sys = jump_system(-RHO - ONE, 1.0, 1.0)
        cfg = SimConfig(horizon=0.1, ode_step=1e-3, x0=np.ones(1), rho0={"rho": 0.75})
        path = simulate_path(sys, None, cfg.x0, cfg, rng(14))
        assert path.trajectory.values[0] == {"rho": 0.75}


class TestEnsemble:
    def test_bit_identical_reruns(self):
        sys = jump_system(-ONE, 10.0, 1.0)
        cfg = SimConfig(horizon=0.3, ode_step=1e-3, n_realizations=8, rng_seed=21,
                        x0=np.ones(1))
        a = run_ensemble(sys, None, cfg)
        b = run_ensemble(sys, None, cfg)
        assert np.array_equal(a.mean_x_sq, b.mean_x_sq)
        assert np.array_equal(a.stderr, b.stderr)

    def test_seed_changes_the_draws(self):
        sys = jump_system(-RHO, 10.0, 1.0)
        base = dict(horizon=0.3, ode_step=1e-3, n_realizations=8, x0=np.ones(1))
        a = run_ensemble(sys, None, SimConfig(rng_seed=1, **base))
        b = run_ensemble(sys, None, SimConfig(rng_seed=2, **base))
        assert not np.array_equal(a.mean_x_sq, b.mean_x_sq)

    def test_zero_system_zero_stats(self):
        sys = jump_system(Poly.zero(VS_R), 1.0, 1.0)
        cfg = SimConfig(horizon=0.2, ode_step=1e-3, n_realizations=4)
        stats_ = run_ensemble(sys, None, cfg)
        assert isinstance(stats_, EnsembleStats)
        assert not stats_.mean_x_sq.any()
        assert stats_.gain_estimate is None

    def test_decay_rate_at_least_the_certified_rate(self):
        sys = jump_system(-ONE, 2.0, 1.0)
        alpha = 0.5
        assert certify_stability(sys, alpha).grid_report.passed
        cfg = SimConfig(horizon=2.0, ode_step=1e-3, n_realizations=32, rng_seed=33,
                        x0=np.array([3.0]))
        st = run_ensemble(sys, None, cfg)
        # regression on log E|x|^2 over the front half; certified alpha is a
        # lower bound on the true decay
        half = len(st.t) // 2
        slope = np.polyfit(st.t[:half], np.log(st.mean_x_sq[:half]), 1)[0]
        assert -slope >= 2.0 * alpha * (1.0 - 0.15)

    def test_coarse_step_warns(self):
        sys = jump_system(-ONE, 200.0, 1.0)
        cfg = SimConfig(horizon=0.05, ode_step=1e-2, n_realizations=2, x0=np.ones(1))
        with pytest.warns(RuntimeWarning, match="inter-jump"):
            run_ensemble(sys, None, cfg)


class TestDynkin:
    def test_certified_envelope_holds(self):
        sys = jump_system(-ONE, 2.0, 1.0)
        cert = certify_stability(sys, 0.5)
        cfg = SimConfig(horizon=1.5, ode_step=1e-3, n_realizations=24, rng_seed=44,
                        x0=np.array([2.0]), rho0={"rho": 0.5})
        passed, t, mean_V, envelope = dynkin_check(sys, cert.P, cert.alpha,
                                                   cfg.x0, cfg)
        assert passed
        assert mean_V[0] <= envelope[0] + 1e-12

    def test_requires_pinned_rho0(self):
        sys = jump_system(-ONE, 2.0, 1.0)
        cert = certify_stability(sys, 0.5)
        cfg = SimConfig(horizon=0.5, n_realizations=2, x0=np.ones(1))
        with pytest.raises(StructuralError):
            dynkin_check(sys, cert.P, cert.alpha, cfg.x0, cfg)


class TestInputSignal:
    def test_pulse_is_right_continuous(self):
        sig = InputSignal.pulse(3.0, 1.0)
        assert sig.value(0.0)[0] == 3.0
        assert sig.value(0.999)[0] == 3.0
        assert sig.value(1.0)[0] == 0.0

    def test_table_validation(self):
        with pytest.raises(StructuralError):
            InputSignal([0.5, 1.0], [[1.0], [0.0]])  # must start at 0
        with pytest.raises(StructuralError):
            InputSignal([0.0, 0.0], [[1.0], [0.0]])  # strictly increasing
        with pytest.raises(StructuralError):
            InputSignal([0.0, 1.0], [[1.0], [0.0, 2.0]])  # ragged dimensions

    def test_dimension_mismatch_rejected(self):
        sys = jump_system(-ONE, 1.0, 1.0, E=PolyMatrix.from_rows([[ONE]], VS_R))
        cfg = SimConfig(horizon=0.1, input=InputSignal([0.0], [[1.0, 2.0]]))
        with pytest.raises(StructuralError):
            simulate_path(sys, None, None, cfg, rng())


class TestCsvOutput:
    def test_trace_roundtrip(self, tmp_path):
        sys = jump_system(-ONE, 5.0, 1.0)
        cfg = SimConfig(horizon=0.01, ode_step=1e-3, x0=np.array([1.5]))
        path = simulate_path(sys, None, cfg.x0, cfg, rng(15))
        out = tmp_path / "trace.csv"
        write_trace_csv(out, sys, [path])
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["realization", "t", "x1", "rho"]
        assert float(rows[1][2]) == 1.5
        assert len(rows) == 1 + len(path.t)

    def test_ensemble_roundtrip(self, tmp_path):
        sys = jump_system(-ONE, 5.0, 1.0)
        cfg = SimConfig(horizon=0.01, ode_step=1e-3, n_realizations=3,
                        x0=np.array([2.0]))
        st = run_ensemble(sys, None, cfg)
        out = tmp_path / "ens.csv"
        write_ensemble_csv(out, st)
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["t", "mean_x_sq", "stderr"]
        assert float(rows[1][1]) == pytest.approx(4.0)
        recovered = np.array([float(r[1]) for r in rows[1:]])
        assert np.array_equal(recovered, st.mean_x_sq)


class TestTrajectoryType:
    def test_append_enforces_order_and_membership(self):
        traj = ParamTrajectory()
        box = Box({"rho": (0.0, 1.0)})
        traj.append(0.0, {"rho": 0.5}, box)
        with pytest.raises(StructuralError):
            traj.append(0.0, {"rho": 0.5}, box)
        with pytest.raises(StructuralError):
            traj.append(1.0, {"rho": 2.0}, box)
        traj.append(1.0, {"rho": 1.0}, box)
        assert traj.value_at(0.5) == {"rho": 0.5}
        assert traj.value_at(1.0) == {"rho": 1.0}
