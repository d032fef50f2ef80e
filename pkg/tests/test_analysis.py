import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paoa.analysis import (
    DegenerateScheduleError, ScheduleModel, approx_ratio, bootstrap_ci, bootstrap_cis,
    depth_metrics, extrapolate_schedule, extrapolate_two_schedule, fit_schedule_model,
    fit_two_schedule, layer_positions, metric_curve, model_log_schedule, residual_energy,
)
from paoa.circuit import TwoSchedule
from paoa.device import SymmetricTanh
from paoa.problems import exact_ground_state, gen_sk_instance
from paoa.variational import OptimizerConfig, train_instance


def generated(beta0, beta_f, c, p):
    return np.exp(model_log_schedule(ScheduleModel(beta0, beta_f, c), layer_positions(p)))


class TestMetrics:
    def test_residual_examples(self):
        assert residual_energy(-5.0, -5.0, 26) == 0.0
        assert residual_energy(-5.0 + 26, -5.0, 26) == pytest.approx(1.0, rel=1e-15)
        with pytest.raises(ValueError):
            residual_energy(0.0, -1.0, 0)

    def test_ratio_examples(self):
        assert approx_ratio(-4.0, -4.0) == 1.0
        assert approx_ratio(0.0, -4.0) == 0.0
        assert approx_ratio(0.9 * -4.0, -4.0) == pytest.approx(0.9, rel=1e-15)
        with pytest.raises(ValueError):
            approx_ratio(-1.0, 0.0)

    @given(st.floats(-50, 50), st.floats(-50, -0.01), st.integers(1, 100))
    def test_ratio_residual_identity(self, mean_e, e_sol, n):
        lhs = approx_ratio(mean_e, e_sol)
        rhs = 1 - n * residual_energy(mean_e, e_sol, n) / abs(e_sol)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


class TestBootstrap:
    def test_constant(self):
        assert bootstrap_ci([2.5] * 40) == (2.5, 2.5)

    def test_empty_and_level(self):
        with pytest.raises(ValueError):
            bootstrap_ci([])
        with pytest.raises(ValueError):
            bootstrap_ci([1.0, 2.0], level=1.0)

    def test_clt_width(self):
        x = np.random.default_rng(0).standard_normal(10_000)
        lo, hi = bootstrap_ci(x, seed=1)
        assert abs((hi - lo) / (2 * 1.96 / 100) - 1) < 0.2
        assert lo < x.mean() < hi

    def test_deterministic(self):
        x = np.random.default_rng(0).exponential(size=500)
        assert bootstrap_ci(x, seed=4) == bootstrap_ci(x, seed=4)
        assert bootstrap_ci(x, seed=4) != bootstrap_ci(x, seed=5)

    def test_coverage(self):
        rng = np.random.default_rng(11)
        hits = 0
        for trial in range(500):
            x = rng.normal(3.0, 2.0, 200)
            lo, hi = bootstrap_ci(x, n_resamples=2000, seed=trial)
            hits += lo <= 3.0 <= hi
        assert abs(hits / 500 - 0.95) <= 0.03

    def test_columns_share_indices(self):
        x = np.random.default_rng(0).normal(size=300)
        (a_lo, a_hi), (b_lo, b_hi) = bootstrap_cis([x, 2 * x + 1], 1000, seed=3)
        assert b_lo == pytest.approx(2 * a_lo + 1, rel=1e-12)
        assert b_hi == pytest.approx(2 * a_hi + 1, rel=1e-12)


class TestScheduleModel:
    def test_log_geometric(self):
        m = fit_schedule_model(np.geomspace(0.3, 6.0, 17))
        assert abs(m.c) < 1e-12
        assert m.beta0 == 0.3 and m.beta_f == 6.0

    def test_round_trip(self):
        m = fit_schedule_model(generated(0.4, 5.0, 0.7, 17))
        assert m.c == pytest.approx(0.7, abs=1e-10)
        assert m.rss < 1e-20

    @given(st.integers(3, 40), st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_matches_lstsq(self, p, seed):
        beta = np.random.default_rng(seed).uniform(0.1, 10, p)
        m = fit_schedule_model(beta)
        g = layer_positions(p)
        r = np.log(beta) - np.log(beta[0]) - g * (np.log(beta[-1]) - np.log(beta[0]))
        (c_ref,), *_ = np.linalg.lstsq((g * (1 - g))[:, None], r, rcond=None)
        assert m.c == pytest.approx(c_ref, rel=1e-9, abs=1e-12)

    @given(st.integers(3, 30), st.integers(0, 10_000), st.floats(1e-4, 1.0))
    @settings(max_examples=30)
    def test_c_star_is_minimiser(self, p, seed, delta):
        beta = np.random.default_rng(seed).uniform(0.1, 10, p)
        m = fit_schedule_model(beta)
        g = layer_positions(p)

        def rss(c):
            model = ScheduleModel(m.beta0, m.beta_f, c)
            return float(((np.log(beta) - model_log_schedule(model, g)) ** 2).sum())

        assert rss(m.c + delta) > rss(m.c) and rss(m.c - delta) > rss(m.c)
        assert rss(m.c) == pytest.approx(m.rss, rel=1e-9, abs=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateScheduleError):
            fit_schedule_model([1.0, 2.0])
        with pytest.raises(DegenerateScheduleError):
            fit_schedule_model([1.0, 0.0, 2.0])


class TestExtrapolate:
    def test_reproduces_fitted_schedule(self):
        beta = generated(0.5, 4.0, -0.3, 17)
        out = extrapolate_schedule(fit_schedule_model(beta), 17)
        assert np.allclose(out, beta, rtol=1e-12)

    @given(st.floats(0.05, 10), st.floats(0.05, 10), st.floats(-3, 3), st.integers(2, 2000))
    @settings(max_examples=40)
    def test_endpoints_exact(self, b0, bf, c, p):
        out = extrapolate_schedule(ScheduleModel(b0, bf, c), p)
        assert out[0] == b0 and out[-1] == bf and out.size == p

    def test_depth_one(self):
        assert list(extrapolate_schedule(ScheduleModel(0.7, 3.0, 0.4), 1)) == [0.7]
        assert list(layer_positions(1)) == [0.0]

    @given(st.floats(0.05, 5), st.floats(1.01, 20), st.floats(-1, 1), st.integers(2, 500))
    @settings(max_examples=40)
    def test_monotone_in_fitted_regime(self, b0, ratio, frac, p):
        bf = b0 * ratio
        c = frac * math.log(ratio)  # |c| <= ln(beta_f / beta0)
        out = extrapolate_schedule(ScheduleModel(b0, bf, c), p)
        assert np.all(np.diff(out) >= -1e-12 * bf)

    def test_two_schedule(self):
        sch = TwoSchedule(generated(0.5, 4.0, 0.2, 17), generated(0.3, 5.0, -0.1, 17))
        ext = extrapolate_two_schedule(fit_two_schedule(sch), 100)
        assert ext.p == 100
        assert ext.beta1[0] == sch.beta1[0] and ext.beta2[-1] == sch.beta2[-1]


class TestMetricCurve:
    insts = [gen_sk_instance(8, s) for s in (1, 2)]
    e_sols = [exact_ground_state(i).e_sol for i in insts]

    def test_depth_trend_single_instance(self):
        inst, e_sol = self.insts[0], self.e_sols[0]
        cfg = OptimizerConfig(max_iterations=150, eps_step=1e-3, runs_per_eval=1000, cost_seed=1)
        schedules = {p: train_instance(inst, p, SymmetricTanh(), cfg).parameters for p in (1, 17)}
        curve = metric_curve([inst], [e_sol], schedules, SymmetricTanh(), 5000, 7,
                             n_resamples=500)
        assert curve[1].ratio.mean > curve[0].ratio.mean

    def test_duplicate_instances(self):
        sch = {3: TwoSchedule.constant(3)}
        one = metric_curve(self.insts[:1], self.e_sols[:1], sch, SymmetricTanh(), 2000, 3,
                           n_resamples=1000)[0]
        two = metric_curve(self.insts[:1] * 2, self.e_sols[:1] * 2, sch, SymmetricTanh(), 2000,
                           3, n_resamples=1000)[0]
        assert two.n_runs == 2 * one.n_runs
        assert two.ratio.mean == pytest.approx(one.ratio.mean, abs=0.02)
        assert (two.ratio.ci_high - two.ratio.ci_low) <= (one.ratio.ci_high - one.ratio.ci_low)

    def test_deterministic_and_ordered(self):
        sch = {3: TwoSchedule.constant(3), 1: TwoSchedule.constant(1)}
        a = metric_curve(self.insts, self.e_sols, sch, SymmetricTanh(), 1000, 3, n_resamples=300)
        b = metric_curve(self.insts, self.e_sols, sch, SymmetricTanh(), 1000, 3, n_resamples=300)
        assert a == b
        assert [m.depth for m in a] == [1, 3]
        for m in a:
            for point in (m.residual, m.ratio):
                assert point.ci_low <= point.mean <= point.ci_high

    def test_beta_zero_residual(self):
        inst, e_sol = self.insts[1], self.e_sols[1]
        runs = 20_000
        m = metric_curve([inst], [e_sol], {1: TwoSchedule.constant(1, 0.0)}, SymmetricTanh(),
                         runs, 5, n_resamples=2000)[0]
        # uniform spins: E has mean 0 and variance sum_{i<j} J_ij^2 / n + sum h_i^2
        var = (np.triu(inst.j, 1) ** 2).sum() / inst.n + (inst.h ** 2).sum()
        assert abs(m.mean_energy) < 4 * math.sqrt(var / runs)
        assert m.residual.mean == pytest.approx(residual_energy(m.mean_energy, e_sol, inst.n))

    def test_instance_mode(self):
        energies = [np.array([-1.0, -2.0]), np.array([-3.0, -3.0])]
        runs = depth_metrics(1, energies, [-4.0, -4.0], 4, ci_mode="runs", n_resamples=200)
        inst = depth_metrics(1, energies, [-4.0, -4.0], 4, ci_mode="instances", n_resamples=200)
        assert runs.ratio.mean == inst.ratio.mean == pytest.approx(9 / 16)
        assert runs.ratio.n_samples == 4 and inst.ratio.n_samples == 2
        with pytest.raises(ValueError):
            depth_metrics(1, energies, [-4.0, -4.0], 4, ci_mode="both")
