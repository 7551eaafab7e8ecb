"""Single-parameter sweep planning and sensitivity analysis.

For each parameter the campaign varies it alone across a level grid (all
others at defaults) and scores it by the coefficient of variation

    CV = (max level mean - min level mean) / default-config mean

per workload, aggregated as the max over workloads. Parameters whose
aggregate CV exceeds the selection threshold form the top-k set that the
interaction stage screens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .errors import AnalysisError, ParameterError
from .harness import (OUTCOME_CRASH, OUTCOME_OK, OUTCOME_TIMEOUT,
                      MeasurementLog, PlanEntry)
from .space import Configuration, ParameterSpace, WorkloadSpec, level_grid

DEFAULT_TAU_S = 0.05      # aggregate-CV selection threshold
DEFAULT_FLAT_TOL = 0.02   # below this range/baseline ratio a curve is flat
DEFAULT_STEP_FRAC = 0.6   # single-gap share of total range that marks a step
SAFE_FRACTION = 0.5       # levels below this share of baseline are unsafe

SHAPE_LABELS = ("monotonic-up", "monotonic-down", "non-monotonic", "step-function", "flat")


@dataclass
class SweepResult:
    """Per-(parameter, workload) sweep observations grouped by level."""

    parameter: str
    workload_id: str
    levels: list[Any]
    values: list[list[float]]          # ok metric values per level
    excluded: list[dict[str, int]]     # per-level crash/timeout/degraded counts

    def mean(self, i: int) -> float | None:
        v = self.values[i]
        return sum(v) / len(v) if v else None

    def means(self) -> list[float | None]:
        return [self.mean(i) for i in range(len(self.levels))]

    def usable(self) -> list[int]:
        """Indices of levels with at least one ok repetition."""
        return [i for i, v in enumerate(self.values) if v]


@dataclass
class SafeRange:
    """Contiguous safe span; numeric domains use (lo, hi), enums a value list."""

    lo: Any
    hi: Any
    values: list[Any] | None = None

    def to_json(self) -> dict:
        if self.values is not None:
            return {"values": self.values}
        return {"lo": self.lo, "hi": self.hi}

    @classmethod
    def from_json(cls, d: dict) -> "SafeRange":
        if "values" in d:
            vals = list(d["values"])
            return cls(lo=vals[0], hi=vals[-1], values=vals)
        return cls(lo=d["lo"], hi=d["hi"])


@dataclass
class SensitivityProfile:
    parameter: str
    cv_per_workload: dict[str, float]
    aggregate_cv: float
    shape: str
    safe_range: SafeRange
    rank: int = 0
    selected: bool = False
    best_level: dict[str, Any] = field(default_factory=dict)  # per-workload argbest level
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "parameter": self.parameter,
            "cv_per_workload": self.cv_per_workload,
            "aggregate_cv": self.aggregate_cv,
            "shape": self.shape,
            "safe_range": self.safe_range.to_json(),
            "rank": self.rank,
            "selected": self.selected,
            "best_level": self.best_level,
            "warnings": self.warnings,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SensitivityProfile":
        return cls(
            parameter=d["parameter"],
            cv_per_workload=dict(d["cv_per_workload"]),
            aggregate_cv=float(d["aggregate_cv"]),
            shape=d["shape"],
            safe_range=SafeRange.from_json(d["safe_range"]),
            rank=int(d["rank"]),
            selected=bool(d["selected"]),
            best_level=dict(d.get("best_level", {})),
            warnings=list(d.get("warnings", [])),
        )


@dataclass
class SensitivityReport:
    """Stage-1 output: one record per swept parameter, plus campaign identity."""

    campaign_id: str
    space_hash: str
    tau_s: float
    baseline_means: dict[str, float]
    profiles: list[SensitivityProfile]
    excluded_runs: int = 0

    def profile(self, name: str) -> SensitivityProfile:
        for p in self.profiles:
            if p.parameter == name:
                return p
        raise ParameterError(f"no profile for parameter {name!r}")

    def top_k(self) -> list[SensitivityProfile]:
        return [p for p in self.profiles if p.selected]

    def cumulative_cv_share(self) -> list[float]:
        """Running share of the total aggregate CV mass, in rank order."""
        ranked = sorted(self.profiles, key=lambda p: p.rank)
        total = sum(p.aggregate_cv for p in ranked)
        if total <= 0:
            return [0.0] * len(ranked)
        acc, out = 0.0, []
        for p in ranked:
            acc += p.aggregate_cv
            out.append(acc / total)
        return out

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "campaign_id": self.campaign_id,
            "space_hash": self.space_hash,
            "tau_s": self.tau_s,
            "baseline_means": self.baseline_means,
            "excluded_runs": self.excluded_runs,
            "profiles": [p.to_json() for p in self.profiles],
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, d: dict) -> "SensitivityReport":
        return cls(
            campaign_id=d["campaign_id"],
            space_hash=d["space_hash"],
            tau_s=float(d["tau_s"]),
            baseline_means=dict(d["baseline_means"]),
            profiles=[SensitivityProfile.from_json(p) for p in d["profiles"]],
            excluded_runs=int(d.get("excluded_runs", 0)),
        )

    @classmethod
    def load(cls, path: str) -> "SensitivityReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def plan_sweep(space: ParameterSpace, workloads: list[WorkloadSpec],
               levels_per_param: int, repetitions: int) -> list[PlanEntry]:
    """One-at-a-time sweep plan: every entry varies exactly one parameter.

    Size is sum_i L_i * r * W plus one all-defaults baseline per workload and
    repetition (the CV denominator).
    """
    if not 3 <= levels_per_param <= 9:
        raise ParameterError(f"levels_per_param must be in [3, 9], got {levels_per_param}")
    if repetitions < 1:
        raise ParameterError("repetitions must be >= 1")
    if not len(space) or not workloads:
        raise ParameterError("need a non-empty space and at least one workload")
    plan: list[PlanEntry] = []
    default = space.defaults()
    for w in workloads:
        for rep in range(repetitions):
            plan.append((default, w, rep))
    for spec in space:
        count = min(levels_per_param, len(spec.domain.ordered_values)) \
            if spec.domain.kind in ("enum", "boolean") else levels_per_param
        count = max(2, count)
        for value in level_grid(spec, count):
            config = Configuration({spec.name: value})
            for w in workloads:
                for rep in range(repetitions):
                    plan.append((config, w, rep))
    return plan


def build_sweep_results(log: MeasurementLog, space: ParameterSpace,
                        workloads: list[WorkloadSpec]) -> tuple[dict, dict[str, float]]:
    """Group a sweep log into SweepResults and per-workload baseline means.

    Levels are recovered from the recorded configurations (each sweep config
    assigns exactly one parameter), so analysis replayed from a persisted log
    equals analysis of the live run.
    """
    workload_ids = {w.id for w in workloads}
    per_level: dict[tuple[str, str], dict[Any, list]] = {}
    baselines: dict[str, list[float]] = {w.id: [] for w in workloads}
    for m in log:
        if m.workload_id not in workload_ids:
            continue
        if m.config.is_default():
            if m.outcome == OUTCOME_OK:
                baselines[m.workload_id].append(m.metric_value)
            continue
        if len(m.config.assignments) != 1:
            continue  # not a one-at-a-time entry
        (param, value), = m.config.assignments.items()
        per_level.setdefault((param, m.workload_id), {}).setdefault(value, []).append(m)

    baseline_means = {w: sum(v) / len(v) for w, v in baselines.items() if v}

    def level_sort_key(param: str, value: Any):
        dom = space.get(param).domain
        if dom.kind in ("enum", "boolean"):
            return dom.ordinal(value)
        return float(value)

    sweeps: dict[tuple[str, str], SweepResult] = {}
    for (param, wid), by_value in per_level.items():
        levels = sorted(by_value, key=lambda v: level_sort_key(param, v))
        values, excluded = [], []
        for v in levels:
            ms = by_value[v]
            values.append([m.metric_value for m in ms if m.outcome == OUTCOME_OK])
            counts: dict[str, int] = {}
            for m in ms:
                if m.outcome != OUTCOME_OK:
                    counts[m.outcome] = counts.get(m.outcome, 0) + 1
            excluded.append(counts)
        sweeps[(param, wid)] = SweepResult(parameter=param, workload_id=wid,
                                           levels=levels, values=values, excluded=excluded)
    return sweeps, baseline_means


def compute_cv(sweep: SweepResult, baseline_mean: float) -> float:
    """Coefficient of variation: (max level mean - min level mean) / baseline."""
    if baseline_mean <= 0:
        raise AnalysisError(f"{sweep.parameter}: baseline mean must be positive, got {baseline_mean}")
    means = [sweep.mean(i) for i in sweep.usable()]
    if len(means) < 2:
        raise AnalysisError(
            f"{sweep.parameter}: fewer than 2 usable levels on workload {sweep.workload_id}")
    return (max(means) - min(means)) / baseline_mean


def _pooled_noise_tol(sweep: SweepResult, baseline_mean: float, flat_tol: float) -> float:
    """Reversal tolerance: one pooled standard error of the level means.

    With single-repetition sweeps (no within-level variance available) the
    tolerance falls back to flat_tol * baseline.
    """
    ss, dof, ns = 0.0, 0, []
    for i in sweep.usable():
        v = sweep.values[i]
        ns.append(len(v))
        if len(v) >= 2:
            mean = sum(v) / len(v)
            ss += sum((x - mean) ** 2 for x in v)
            dof += len(v) - 1
    if dof == 0:
        return flat_tol * baseline_mean
    pooled_sd = math.sqrt(ss / dof)
    mean_n = sum(ns) / len(ns)
    return pooled_sd / math.sqrt(mean_n)


def classify_shape(sweep: SweepResult, baseline_mean: float,
                   flat_tol: float = DEFAULT_FLAT_TOL,
                   step_frac: float = DEFAULT_STEP_FRAC) -> str:
    """Label the response curve.

    Precedence: flat, then step-function, then monotonic (within one pooled
    standard error), else non-monotonic. A monotone curve dominated by one
    jump is deliberately a step-function, not monotonic. Fewer than 3 usable
    levels cannot be classified and fall back to flat (callers flag this).
    """
    usable = sweep.usable()
    means = [sweep.mean(i) for i in usable]
    if len(means) < 3:
        return "flat"
    rng = max(means) - min(means)
    if baseline_mean <= 0:
        raise AnalysisError(f"{sweep.parameter}: baseline mean must be positive")
    if rng / baseline_mean <= flat_tol:
        return "flat"
    gaps = [abs(means[i + 1] - means[i]) for i in range(len(means) - 1)]
    big = [g for g in gaps if g >= step_frac * rng]
    if len(big) == 1:
        return "step-function"
    tol = _pooled_noise_tol(sweep, baseline_mean, flat_tol)
    diffs = [means[i + 1] - means[i] for i in range(len(means) - 1)]
    if means[-1] >= means[0] and all(d >= -tol for d in diffs):
        return "monotonic-up"
    if means[-1] <= means[0] and all(d <= tol for d in diffs):
        return "monotonic-down"
    return "non-monotonic"


def _default_level_index(sweep: SweepResult, space: ParameterSpace) -> int:
    """Grid level closest to the parameter's default (ties pick the lower)."""
    spec = space.get(sweep.parameter)
    dom = spec.domain
    if dom.kind in ("enum", "boolean"):
        target = dom.ordinal(spec.default)
        dist = [abs(dom.ordinal(v) - target) for v in sweep.levels]
    else:
        dist = [abs(float(v) - float(spec.default)) for v in sweep.levels]
    best = min(dist)
    return dist.index(best)


def extract_safe_range(sweep: SweepResult, baseline_mean: float,
                       space: ParameterSpace) -> SafeRange:
    """Largest contiguous passing span of levels around the default level.

    A level passes when it recorded zero crash/timeout repetitions, has at
    least one ok repetition, and its ok mean stays at or above half the
    baseline. Fully-degraded levels fail and therefore bound the range.
    """
    if not sweep.levels:
        raise AnalysisError(f"{sweep.parameter}: empty sweep")
    if baseline_mean <= 0:
        raise AnalysisError(f"{sweep.parameter}: baseline mean must be positive")

    def passes(i: int) -> bool:
        counts = sweep.excluded[i]
        if counts.get(OUTCOME_CRASH, 0) or counts.get(OUTCOME_TIMEOUT, 0):
            return False
        mean = sweep.mean(i)
        return mean is not None and mean >= SAFE_FRACTION * baseline_mean

    anchor = _default_level_index(sweep, space)
    if not passes(anchor):
        raise AnalysisError(
            f"{sweep.parameter}: unsafe at default level {sweep.levels[anchor]!r} "
            f"on workload {sweep.workload_id}")
    lo = anchor
    while lo > 0 and passes(lo - 1):
        lo -= 1
    hi = anchor
    while hi < len(sweep.levels) - 1 and passes(hi + 1):
        hi += 1
    dom = space.get(sweep.parameter).domain
    if dom.kind in ("enum", "boolean"):
        return SafeRange(lo=sweep.levels[lo], hi=sweep.levels[hi],
                         values=sweep.levels[lo:hi + 1])
    return SafeRange(lo=sweep.levels[lo], hi=sweep.levels[hi])


def _intersect_ranges(a: SafeRange, b: SafeRange, space: ParameterSpace, param: str) -> SafeRange:
    """Intersection of two safe ranges for the same parameter."""
    if a.values is not None and b.values is not None:
        common = [v for v in a.values if v in b.values]
        if not common:
            raise AnalysisError(f"{param}: safe ranges across workloads do not intersect")
        return SafeRange(lo=common[0], hi=common[-1], values=common)
    lo = max(float(a.lo), float(b.lo))
    hi = min(float(a.hi), float(b.hi))
    if lo > hi:
        raise AnalysisError(f"{param}: safe ranges across workloads do not intersect")
    if space.get(param).domain.kind == "integer":
        return SafeRange(lo=int(lo), hi=int(hi))
    return SafeRange(lo=lo, hi=hi)


def select_top_k(profiles: list[SensitivityProfile], tau_s: float) -> list[SensitivityProfile]:
    """Profiles with aggregate CV above the threshold, ranked descending.

    Ties break lexicographically by parameter name. An empty result is legal
    and surfaces as an anomaly downstream rather than an error here.
    """
    if tau_s < 0:
        raise ParameterError("tau_s must be >= 0")
    chosen = [p for p in profiles if p.aggregate_cv > tau_s]
    return sorted(chosen, key=lambda p: (-p.aggregate_cv, p.parameter))


def analyze_sensitivity(log: MeasurementLog, space: ParameterSpace,
                        workloads: list[WorkloadSpec],
                        tau_s: float = DEFAULT_TAU_S,
                        flat_tol: float = DEFAULT_FLAT_TOL,
                        step_frac: float = DEFAULT_STEP_FRAC) -> SensitivityReport:
    """Full stage-1 analysis of a sweep log into a SensitivityReport.

    Per-parameter CVs are computed per workload and aggregated by max; the
    shape label and per-workload best levels come from the sweeps; safe
    ranges are intersected across workloads so every downstream probe is safe
    everywhere.
    """
    sweeps, baseline_means = build_sweep_results(log, space, workloads)
    for w in workloads:
        if w.id not in baseline_means:
            raise AnalysisError(f"no usable baseline measurements for workload {w.id!r}")

    params = sorted({param for (param, _) in sweeps})
    profiles: list[SensitivityProfile] = []
    excluded_runs = sum(1 for m in log if m.outcome != OUTCOME_OK)
    for param in params:
        cvs: dict[str, float] = {}
        warnings: list[str] = []
        best_level: dict[str, Any] = {}
        safe: SafeRange | None = None
        agg_wid = None
        for w in workloads:
            sweep = sweeps.get((param, w.id))
            if sweep is None:
                continue
            base = baseline_means[w.id]
            cvs[w.id] = compute_cv(sweep, base)
            usable = sweep.usable()
            if len(usable) < 3:
                warnings.append(f"{w.id}: only {len(usable)} usable levels")
            means = {i: sweep.mean(i) for i in usable}
            best_i = (max if w.direction == "maximize" else min)(means, key=lambda i: means[i])
            best_level[w.id] = sweep.levels[best_i]
            rng = extract_safe_range(sweep, base, space)
            safe = rng if safe is None else _intersect_ranges(safe, rng, space, param)
            if agg_wid is None or cvs[w.id] > cvs[agg_wid]:
                agg_wid = w.id
        if not cvs or safe is None:
            continue
        agg_sweep = sweeps[(param, agg_wid)]
        shape = classify_shape(agg_sweep, baseline_means[agg_wid], flat_tol, step_frac)
        profiles.append(SensitivityProfile(
            parameter=param,
            cv_per_workload=cvs,
            aggregate_cv=max(cvs.values()),
            shape=shape,
            safe_range=safe,
            best_level=best_level,
            warnings=warnings,
        ))

    profiles.sort(key=lambda p: (-p.aggregate_cv, p.parameter))
    selected = {p.parameter for p in select_top_k(profiles, tau_s)}
    for rank, p in enumerate(profiles, start=1):
        p.rank = rank
        p.selected = p.parameter in selected

    return SensitivityReport(
        campaign_id=log.campaign_id,
        space_hash=log.space_hash,
        tau_s=tau_s,
        baseline_means=baseline_means,
        profiles=profiles,
        excluded_runs=excluded_runs,
    )
