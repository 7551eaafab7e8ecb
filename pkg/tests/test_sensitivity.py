"""Sweep planning, CV computation, shape classification, safe ranges, top-k."""

import pytest

from helpers import cv_oracle, one_workload, unit_space
from tuneforge.errors import AnalysisError, ParameterError
from tuneforge.harness import run_plan
from tuneforge.sensitivity import (SensitivityProfile, SafeRange, SweepResult,
                                   analyze_sensitivity, classify_shape, compute_cv,
                                   extract_safe_range, plan_sweep, select_top_k)
from tuneforge.simulator import (CrashRegion, Response, SimulatorAdapter,
                                 SimulatorModel)
from tuneforge.space import (Domain, ParameterSpace, ParameterSpec,
                             WorkloadSpec)


def sweep_of(means, parameter="p", workload="w0", reps=1, excluded=None):
    """SweepResult with the given level means (each level = `reps` equal values)."""
    levels = list(range(len(means)))
    values = [[m] * reps if m is not None else [] for m in means]
    return SweepResult(parameter=parameter, workload_id=workload, levels=levels,
                       values=values,
                       excluded=excluded or [{} for _ in means])


class TestPlanSweep:
    def test_one_param_three_levels_three_reps(self):
        space = unit_space(["p"])
        plan = plan_sweep(space, one_workload(), levels_per_param=3, repetitions=3)
        sweep_entries = [e for e in plan if not e[0].is_default()]
        baseline_entries = [e for e in plan if e[0].is_default()]
        assert len(sweep_entries) == 9
        assert len(baseline_entries) == 3

    def test_full_study_scale_arithmetic(self):
        # 116 parameters x 6 levels x 3 reps x 3 workloads ~ 6,297 runs
        space = unit_space([f"p{i:03d}" for i in range(116)])
        workloads = [WorkloadSpec(id=w) for w in ("w1", "w2", "w3")]
        plan = plan_sweep(space, workloads, levels_per_param=6, repetitions=3)
        sweep_entries = [e for e in plan if not e[0].is_default()]
        assert len(sweep_entries) == 116 * 6 * 3 * 3
        assert abs(len(plan) - 6297) / 6297 < 0.01

    def test_each_entry_varies_exactly_one_coordinate(self):
        space = unit_space(["p", "q"])
        plan = plan_sweep(space, one_workload(), levels_per_param=3, repetitions=1)
        sweep_entries = [e for e in plan if not e[0].is_default()]
        assert len(sweep_entries) == 6
        assert all(len(c.assignments) == 1 for c, _, _ in sweep_entries)

    def test_preconditions(self):
        space = unit_space(["p"])
        with pytest.raises(ParameterError):
            plan_sweep(space, one_workload(), levels_per_param=2, repetitions=1)
        with pytest.raises(ParameterError):
            plan_sweep(space, [], levels_per_param=3, repetitions=1)


class TestComputeCv:
    def test_constant_response_is_zero(self):
        assert compute_cv(sweep_of([100, 100, 100]), 100.0) == 0.0

    def test_hand_computed_case(self):
        assert compute_cv(sweep_of([90, 100, 120]), 100.0) == pytest.approx(0.30)

    def test_analytic_linear_up_with_centered_default(self):
        # multiplier spans [1.0, 1.2], default at the middle (multiplier 1.1)
        space = ParameterSpace((ParameterSpec(
            name="p", domain=Domain("continuous", 0.0, 1.0), default=0.5),))
        adapter = SimulatorAdapter(space, SimulatorModel(
            base_rate=1000.0, responses={"p": Response(shape="linear-up", strength=0.2)}))
        plan = plan_sweep(space, one_workload(), levels_per_param=5, repetitions=1)
        log = run_plan(adapter, plan, seed=0)
        report = analyze_sensitivity(log, space, one_workload())
        assert report.profile("p").aggregate_cv == pytest.approx(0.2 / 1.1, rel=1e-9)

    def test_oracle_equivalence_from_raw_log(self):
        space = unit_space(["p", "q"])
        adapter = SimulatorAdapter(space, SimulatorModel(
            base_rate=800.0, sigma=0.03,
            responses={"p": Response(shape="linear-up", strength=0.25),
                       "q": Response(shape="quadratic-peak", strength=0.15, peak=0.3)}))
        plan = plan_sweep(space, one_workload(), levels_per_param=5, repetitions=3)
        log = run_plan(adapter, plan, seed=4)
        report = analyze_sensitivity(log, space, one_workload())
        for param in ("p", "q"):
            assert report.profile(param).cv_per_workload["w0"] == pytest.approx(
                cv_oracle(log, param, "w0"), rel=1e-12)

    def test_errors(self):
        with pytest.raises(AnalysisError):
            compute_cv(sweep_of([100, 100]), 0.0)
        with pytest.raises(AnalysisError):
            compute_cv(sweep_of([100, None, None]), 100.0)


class TestClassifyShape:
    def test_flat_below_tolerance(self):
        assert classify_shape(sweep_of([100, 101, 100]), 100.0, flat_tol=0.02) == "flat"

    def test_monotonic_up(self):
        assert classify_shape(sweep_of([100, 110, 125, 140]), 100.0) == "monotonic-up"

    def test_monotonic_down(self):
        assert classify_shape(sweep_of([140, 125, 110, 100]), 100.0) == "monotonic-down"

    def test_step_function_beats_monotone_label(self):
        # single gap of 59 out of a 61-wide range dominates
        assert classify_shape(sweep_of([100, 101, 160, 161]), 100.0,
                              step_frac=0.8) == "step-function"

    def test_non_monotonic_interior_optimum(self):
        assert classify_shape(sweep_of([100, 130, 120, 90]), 100.0) == "non-monotonic"

    def test_small_reversal_within_noise_still_monotone(self):
        # r=1 tolerance is flat_tol * baseline = 2.0; the 1-unit dip is noise
        assert classify_shape(sweep_of([100, 110, 109, 120]), 100.0,
                              flat_tol=0.02) == "monotonic-up"

    def test_two_usable_levels_fall_back_to_flat(self):
        assert classify_shape(sweep_of([100, None, 150]), 100.0) == "flat"


class TestExtractSafeRange:
    def setup_method(self):
        self.space = ParameterSpace((ParameterSpec(
            name="p", domain=Domain("integer", 0, 4), default=2),))

    def r(self, means, excluded=None):
        sweep = sweep_of(means, excluded=excluded)
        sweep.levels = [0, 1, 2, 3, 4][:len(means)]
        return extract_safe_range(sweep, 100.0, self.space)

    def test_all_ok_full_range(self):
        safe = self.r([100, 105, 110, 108, 102])
        assert (safe.lo, safe.hi) == (0, 4)

    def test_crash_at_top_truncates(self):
        safe = self.r([100, 105, 110, 108, None],
                      excluded=[{}, {}, {}, {}, {"crash": 1}])
        assert (safe.lo, safe.hi) == (0, 3)

    def test_degraded_middle_bounds_range(self):
        # level 3 below half baseline; default (level 2) sits below it
        safe = self.r([100, 105, 110, 40, 102])
        assert (safe.lo, safe.hi) == (0, 2)

    def test_unsafe_at_default_is_an_error(self):
        with pytest.raises(AnalysisError):
            self.r([100, 105, 30, 105, 100])

    def test_crash_truncation_on_simulator(self):
        space = ParameterSpace((ParameterSpec(
            name="p", domain=Domain("continuous", 0.0, 10.0), default=2.0),))
        adapter = SimulatorAdapter(space, SimulatorModel(
            base_rate=100.0, crashes={"p": CrashRegion(8.0, 10.0)}))
        plan = plan_sweep(space, one_workload(), levels_per_param=5, repetitions=2)
        log = run_plan(adapter, plan, seed=0)
        report = analyze_sensitivity(log, space, one_workload())
        safe = report.profile("p").safe_range
        assert safe.hi == 7.5  # grid [0, 2.5, 5, 7.5, 10]; 10 crashed


class TestSelectTopK:
    def profiles(self, cvs):
        return [SensitivityProfile(parameter=n, cv_per_workload={"w0": cv},
                                   aggregate_cv=cv, shape="flat",
                                   safe_range=SafeRange(0, 1))
                for n, cv in cvs.items()]

    def test_threshold_filter(self):
        chosen = select_top_k(self.profiles({"a": 0.30, "b": 0.04, "c": 0.08}), 0.05)
        assert [p.parameter for p in chosen] == ["a", "c"]

    def test_empty_result_allowed(self):
        assert select_top_k(self.profiles({"a": 0.01}), 0.05) == []

    def test_ties_break_lexicographically(self):
        chosen = select_top_k(self.profiles({"b": 0.2, "a": 0.2, "c": 0.3}), 0.05)
        assert [p.parameter for p in chosen] == ["c", "a", "b"]

    def test_planted_recovery_on_simulator(self):
        # 20 parameters, 4 planted sensitive with CV >= 0.10, the rest flat
        names = [f"p{i:02d}" for i in range(20)]
        space = unit_space(names)
        responses = {names[i]: Response(shape="linear-up", strength=s)
                     for i, s in zip((0, 5, 11, 17), (0.25, 0.18, 0.14, 0.10))}
        adapter = SimulatorAdapter(space, SimulatorModel(
            base_rate=1000.0, sigma=0.01, responses=responses))
        plan = plan_sweep(space, one_workload(), levels_per_param=5, repetitions=3)
        log = run_plan(adapter, plan, parallelism=8, seed=13)
        report = analyze_sensitivity(log, space, one_workload(), tau_s=0.05)
        selected = {p.parameter for p in report.top_k()}
        assert selected == {"p00", "p05", "p11", "p17"}  # precision = recall = 1

    def test_scale_invariance(self):
        # multiplying every measurement and the baseline by c leaves
        # CV, rank, selection, and shape label unchanged
        space = unit_space(["p", "q"])
        responses = {"p": Response(shape="linear-up", strength=0.3),
                     "q": Response(shape="quadratic-peak", strength=0.1, peak=0.5)}
        workloads = one_workload()
        reports = []
        for base in (1000.0, 3333.0):
            adapter = SimulatorAdapter(space, SimulatorModel(
                base_rate=base, responses=responses))
            plan = plan_sweep(space, workloads, levels_per_param=5, repetitions=1)
            log = run_plan(adapter, plan, seed=2)
            reports.append(analyze_sensitivity(log, space, workloads))
        for a, b in zip(reports[0].profiles, reports[1].profiles):
            assert a.parameter == b.parameter
            assert a.aggregate_cv == pytest.approx(b.aggregate_cv, rel=1e-12)
            assert (a.rank, a.selected, a.shape) == (b.rank, b.selected, b.shape)


class TestLogReplay:
    def test_analysis_from_persisted_log_equals_live_analysis(self, tmp_path):
        space = unit_space(["p", "q"])
        adapter = SimulatorAdapter(space, SimulatorModel(
            base_rate=900.0, sigma=0.02,
            responses={"p": Response(shape="linear-up", strength=0.3),
                       "q": Response(shape="step", threshold=0.5,
                                     low_mult=1.0, high_mult=1.2)}))
        plan = plan_sweep(space, one_workload(), levels_per_param=5, repetitions=3)
        live = run_plan(adapter, plan, seed=8)
        path = tmp_path / "log.jsonl"
        live.save(str(path))
        from tuneforge.harness import MeasurementLog
        replayed = MeasurementLog.load(str(path))
        a = analyze_sensitivity(live, space, one_workload())
        b = analyze_sensitivity(replayed, space, one_workload())
        assert a.to_json() == b.to_json()


class TestReport:
    def test_round_trip_and_cumulative_share(self, tmp_path):
        space = unit_space(["p", "q"])
        adapter = SimulatorAdapter(space, SimulatorModel(
            base_rate=100.0, responses={"p": Response(shape="linear-up", strength=0.4)}))
        plan = plan_sweep(space, one_workload(), levels_per_param=3, repetitions=1)
        log = run_plan(adapter, plan, seed=0)
        report = analyze_sensitivity(log, space, one_workload())
        path = tmp_path / "report.json"
        report.save(str(path))
        from tuneforge.sensitivity import SensitivityReport
        loaded = SensitivityReport.load(str(path))
        assert loaded.to_json() == report.to_json()
        share = report.cumulative_cv_share()
        assert share[-1] == pytest.approx(1.0)
        assert all(a <= b + 1e-15 for a, b in zip(share, share[1:]))
