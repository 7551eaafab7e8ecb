"""Two-stage pairwise interaction screening.

Stage A runs a 2x2 factorial at the safe-range extremes of each pair and
scores the interaction contrast against the grand mean (Int%). Pairs above
the advance threshold (and the undetermined band, to preserve recall) move to
Stage B: a 4x4 factorial with repetitions, a balanced two-way fixed-effects
ANOVA, an exact F-test on the interaction term, and Benjamini-Hochberg FDR
correction across all tested (pair, workload) combinations. Confirmed pairs
are those with eta^2 above threshold and corrected q below threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Any

from .errors import AnalysisError, ParameterError
from .harness import OUTCOME_OK, MeasurementLog, PlanEntry
from .sensitivity import SafeRange, SensitivityReport
from .space import Configuration, ParameterSpace, ParameterSpec, WorkloadSpec, snap_to_domain
from .stats import benjamini_hochberg, f_upper_tail_p

VERDICT_ADVANCE = "advance"
VERDICT_INDEPENDENT = "independent"
VERDICT_UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class ScreenThresholds:
    advance_pct: float = 15.0
    independent_pct: float = 5.0
    eta2_min: float = 0.15
    q_max: float = 0.05
    stage_b_levels: int = 4
    stage_b_reps: int = 3


@dataclass
class FactorialTable:
    """Balanced a x b factorial of ok metric values for one workload."""

    pair: tuple[str, str]
    levels_a: list[Any]
    levels_b: list[Any]
    cells: list[list[list[float]]]  # [i][j] -> r ok values
    workload_id: str

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.levels_a), len(self.levels_b))

    def is_balanced(self, r: int) -> bool:
        return all(len(cell) == r for row in self.cells for cell in row)

    def cell_means(self) -> list[list[float]]:
        out = []
        for row in self.cells:
            means = []
            for cell in row:
                if not cell:
                    raise AnalysisError(f"{self.pair}: empty factorial cell (unbalanced table)")
                means.append(sum(cell) / len(cell))
            out.append(means)
        return out


@dataclass
class AnovaDecomposition:
    """Balanced two-way fixed-effects sums-of-squares decomposition."""

    ss_a: float
    ss_b: float
    ss_interaction: float
    ss_error: float
    ss_total: float
    df_a: int
    df_b: int
    df_interaction: int
    df_error: int
    f_interaction: float
    p_value: float

    def to_json(self) -> dict:
        d = {
            "ss_a": self.ss_a, "ss_b": self.ss_b,
            "ss_interaction": self.ss_interaction,
            "ss_error": self.ss_error, "ss_total": self.ss_total,
            "df_a": self.df_a, "df_b": self.df_b,
            "df_interaction": self.df_interaction, "df_error": self.df_error,
            "f_interaction": "inf" if math.isinf(self.f_interaction) else self.f_interaction,
            "p_value": self.p_value,
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "AnovaDecomposition":
        f = d["f_interaction"]
        return cls(ss_a=d["ss_a"], ss_b=d["ss_b"], ss_interaction=d["ss_interaction"],
                   ss_error=d["ss_error"], ss_total=d["ss_total"],
                   df_a=d["df_a"], df_b=d["df_b"],
                   df_interaction=d["df_interaction"], df_error=d["df_error"],
                   f_interaction=math.inf if f == "inf" else float(f),
                   p_value=d["p_value"])


@dataclass
class InteractionRecord:
    """Screening outcome for one (pair, workload)."""

    pair: tuple[str, str]
    workload_id: str
    stage_a_int_pct: float | None
    stage_a_verdict: str | None
    eta_squared: float | None = None
    partial_eta_squared: float | None = None
    p_value: float | None = None
    q_value: float | None = None
    confirmed: bool = False
    unsafe_to_screen: bool = False
    decomposition: AnovaDecomposition | None = None

    def to_json(self) -> dict:
        d: dict[str, Any] = {
            "pair": list(self.pair),
            "workload_id": self.workload_id,
            "stage_a_int_pct": self.stage_a_int_pct,
            "stage_a_verdict": self.stage_a_verdict,
            "eta_squared": self.eta_squared,
            "partial_eta_squared": self.partial_eta_squared,
            "p_value": self.p_value,
            "q_value": self.q_value,
            "confirmed": self.confirmed,
            "unsafe_to_screen": self.unsafe_to_screen,
        }
        if self.confirmed and self.decomposition is not None:
            d["decomposition"] = self.decomposition.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "InteractionRecord":
        decomp = d.get("decomposition")
        return cls(
            pair=(d["pair"][0], d["pair"][1]),
            workload_id=d["workload_id"],
            stage_a_int_pct=d["stage_a_int_pct"],
            stage_a_verdict=d["stage_a_verdict"],
            eta_squared=d.get("eta_squared"),
            partial_eta_squared=d.get("partial_eta_squared"),
            p_value=d.get("p_value"),
            q_value=d.get("q_value"),
            confirmed=bool(d.get("confirmed", False)),
            unsafe_to_screen=bool(d.get("unsafe_to_screen", False)),
            decomposition=AnovaDecomposition.from_json(decomp) if decomp else None,
        )


@dataclass
class InteractionReport:
    campaign_id: str
    space_hash: str
    thresholds: ScreenThresholds
    records: list[InteractionRecord]

    def confirmed_pairs(self) -> dict[tuple[str, str], float]:
        """Pair -> max eta^2 over the workloads that confirmed it."""
        return {pair: rec.eta_squared for pair, rec in self.confirmed_records().items()}

    def confirmed_records(self) -> dict[tuple[str, str], InteractionRecord]:
        """Pair -> the confirming record with the largest eta^2."""
        out: dict[tuple[str, str], InteractionRecord] = {}
        for rec in self.records:
            if rec.confirmed and rec.eta_squared is not None:
                prev = out.get(rec.pair)
                if prev is None or rec.eta_squared > prev.eta_squared:
                    out[rec.pair] = rec
        return out

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "campaign_id": self.campaign_id,
            "space_hash": self.space_hash,
            "thresholds": {
                "advance_pct": self.thresholds.advance_pct,
                "independent_pct": self.thresholds.independent_pct,
                "eta2_min": self.thresholds.eta2_min,
                "q_max": self.thresholds.q_max,
                "stage_b_levels": self.thresholds.stage_b_levels,
                "stage_b_reps": self.thresholds.stage_b_reps,
            },
            "records": [r.to_json() for r in self.records],
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, d: dict) -> "InteractionReport":
        t = d["thresholds"]
        return cls(
            campaign_id=d["campaign_id"],
            space_hash=d["space_hash"],
            thresholds=ScreenThresholds(
                advance_pct=t["advance_pct"], independent_pct=t["independent_pct"],
                eta2_min=t["eta2_min"], q_max=t["q_max"],
                stage_b_levels=t.get("stage_b_levels", 4),
                stage_b_reps=t.get("stage_b_reps", 3)),
            records=[InteractionRecord.from_json(r) for r in d["records"]],
        )

    @classmethod
    def load(cls, path: str) -> "InteractionReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def plan_pairs(top_k: list[str]) -> list[tuple[str, str]]:
    """All C(k, 2) unordered pairs in canonical (lexicographic) order."""
    if len(top_k) < 2:
        raise AnalysisError(f"need at least 2 parameters to screen pairs, got {len(top_k)}")
    if len(set(top_k)) != len(top_k):
        raise ParameterError("top_k parameter names must be unique")
    return sorted(tuple(sorted(pair)) for pair in combinations(top_k, 2))


def _span_points(spec: ParameterSpec, safe: SafeRange, fracs: list[float]) -> list[Any]:
    """Values at the given fractional positions of the safe span, deduplicated."""
    dom = spec.domain
    if dom.kind in ("enum", "boolean"):
        vals = safe.values if safe.values is not None else list(dom.ordered_values)
        n = len(vals)
        idxs: list[int] = []
        for f in fracs:
            i = round(f * (n - 1))
            if i not in idxs:
                idxs.append(i)
        return [vals[i] for i in sorted(idxs)]
    lo, hi = float(safe.lo), float(safe.hi)
    out: list[Any] = []
    for f in fracs:
        v = snap_to_domain(spec, lo + f * (hi - lo))
        if v not in out:
            out.append(v)
    return out


def stage_a_levels(spec: ParameterSpec, safe: SafeRange, interior: bool = False) -> list[Any]:
    """Two factor levels: the safe-range extremes (or interior fallback points)."""
    fracs = [0.25, 0.75] if interior else [0.0, 1.0]
    return _span_points(spec, safe, fracs)


def stage_b_levels(spec: ParameterSpec, safe: SafeRange, count: int = 4,
                   interior: bool = False, factorial: bool = True) -> list[Any]:
    """`count` probe points spread across the safe range.

    With ``factorial=True`` (ANOVA tables), domains too coarse for `count`
    distinct values fall back to 2 (the extremes), keeping the factorial
    shape in {2, 4}. Grid consumers (joint search, document grids) pass
    ``factorial=False`` and keep every distinct level, e.g. all 3 values of
    a ternary enum.
    """
    if interior:
        fracs = [(2 * k + 1) / (2 * count) for k in range(count)]
    else:
        fracs = [k / (count - 1) for k in range(count)]
    levels = _span_points(spec, safe, fracs)
    if len(levels) >= count:
        return levels[:count]
    if factorial and len(levels) > 2:
        return [levels[0], levels[-1]]
    return levels


def plan_pair_table(pair: tuple[str, str], levels_a: list[Any], levels_b: list[Any],
                    workloads: list[WorkloadSpec], repetitions: int) -> list[PlanEntry]:
    """Full-factorial plan entries for one pair."""
    a, b = pair
    plan: list[PlanEntry] = []
    for va in levels_a:
        for vb in levels_b:
            config = Configuration({a: va, b: vb})
            for w in workloads:
                for rep in range(repetitions):
                    plan.append((config, w, rep))
    return plan


def table_from_log(log: MeasurementLog, pair: tuple[str, str], levels_a: list[Any],
                   levels_b: list[Any], workload_id: str,
                   repetitions: int = 1) -> FactorialTable:
    """Assemble the factorial table for one (pair, workload) from a log.

    Only repetition indices below ``repetitions`` are collected, so a log
    holding both the 1-rep stage-A corners and the 3-rep stage-B grid yields
    a clean table for either stage.
    """
    a, b = pair
    index: dict[str, list[float]] = {}
    for m in log:
        if m.workload_id != workload_id or m.outcome != OUTCOME_OK:
            continue
        if m.repetition >= repetitions:
            continue
        if set(m.config.assignments) != {a, b}:
            continue
        index.setdefault(m.config.config_hash(), []).append(m.metric_value)
    cells = []
    for va in levels_a:
        row = []
        for vb in levels_b:
            key = Configuration({a: va, b: vb}).config_hash()
            row.append(sorted(index.get(key, [])))
        cells.append(row)
    return FactorialTable(pair=pair, levels_a=levels_a, levels_b=levels_b,
                          cells=cells, workload_id=workload_id)


def stage_a_int_pct(table: FactorialTable) -> float:
    """Approximate interaction percentage from a 2x2 table.

    100 * |y(+,+) - y(+,-) - y(-,+) + y(-,-)| / (|sum of the four means| / 4).
    Exactly additive cell means give 0.
    """
    if table.shape != (2, 2):
        raise AnalysisError(f"{table.pair}: stage A requires a 2x2 table, got {table.shape}")
    means = table.cell_means()
    y_ll, y_lh = means[0][0], means[0][1]
    y_hl, y_hh = means[1][0], means[1][1]
    numerator = abs(y_hh - y_hl - y_lh + y_ll)
    denominator = abs(y_hh + y_hl + y_lh + y_ll) / 4.0
    if denominator == 0:
        raise AnalysisError(f"{table.pair}: zero grand mean in stage A table")
    return 100.0 * numerator / denominator


def stage_a_verdict(int_pct: float, thresholds: ScreenThresholds) -> str:
    if int_pct > thresholds.advance_pct:
        return VERDICT_ADVANCE
    if int_pct < thresholds.independent_pct:
        return VERDICT_INDEPENDENT
    return VERDICT_UNDETERMINED


def two_way_anova(table: FactorialTable, repetitions: int) -> AnovaDecomposition:
    """Balanced two-way fixed-effects decomposition with the exact F-test.

    SS_A = b*r * sum_i (m_i. - m)^2        SS_B = a*r * sum_j (m_.j - m)^2
    SS_AB = r * sum_ij (m_ij - m_i. - m_.j + m)^2
    SS_E = sum_ijk (y_ijk - m_ij)^2        F = (SS_AB/df_AB) / (SS_E/df_E)

    Deterministic data degenerates cleanly: SS_E = 0 with SS_AB = 0 gives
    p = 1; SS_E = 0 with SS_AB > 0 gives p = 0.
    """
    a, b = table.shape
    if a < 2 or b < 2:
        raise AnalysisError(f"{table.pair}: factorial needs at least 2 levels per factor")
    if not table.is_balanced(repetitions):
        raise AnalysisError(f"{table.pair}: unbalanced table on workload {table.workload_id}")
    cells = table.cells
    n = a * b * repetitions
    grand = sum(v for row in cells for cell in row for v in cell) / n
    m_ij = [[sum(cell) / repetitions for cell in row] for row in cells]
    m_i = [sum(row) / b for row in m_ij]
    m_j = [sum(m_ij[i][j] for i in range(a)) / a for j in range(b)]

    ss_a = b * repetitions * sum((mi - grand) ** 2 for mi in m_i)
    ss_b = a * repetitions * sum((mj - grand) ** 2 for mj in m_j)
    ss_ab = repetitions * sum(
        (m_ij[i][j] - m_i[i] - m_j[j] + grand) ** 2 for i in range(a) for j in range(b))
    ss_e = sum((v - m_ij[i][j]) ** 2
               for i in range(a) for j in range(b) for v in cells[i][j])
    ss_total = sum((v - grand) ** 2 for row in cells for cell in row for v in cell)

    df_a, df_b = a - 1, b - 1
    df_ab = df_a * df_b
    df_e = a * b * (repetitions - 1)

    if ss_e == 0.0:
        if ss_ab == 0.0:
            f_stat, p = 0.0, 1.0
        else:
            f_stat, p = math.inf, 0.0
    else:
        if df_e == 0:
            raise AnalysisError(f"{table.pair}: no error degrees of freedom (r=1)")
        f_stat = (ss_ab / df_ab) / (ss_e / df_e)
        p = f_upper_tail_p(f_stat, df_ab, df_e)

    return AnovaDecomposition(ss_a=ss_a, ss_b=ss_b, ss_interaction=ss_ab,
                              ss_error=ss_e, ss_total=ss_total,
                              df_a=df_a, df_b=df_b, df_interaction=df_ab, df_error=df_e,
                              f_interaction=f_stat, p_value=p)


def eta_squared(decomp: AnovaDecomposition) -> float:
    """Interaction effect size: SS_interaction / SS_total."""
    if decomp.ss_total == 0.0:
        return 0.0
    return decomp.ss_interaction / decomp.ss_total


def partial_eta_squared(decomp: AnovaDecomposition) -> float:
    """The partial variant SS_AB / (SS_AB + SS_E), surfaced alongside eta^2."""
    denom = decomp.ss_interaction + decomp.ss_error
    if denom == 0.0:
        return 0.0
    return decomp.ss_interaction / denom


def screen_pair(stage_a_log: MeasurementLog, stage_b_log: MeasurementLog | None,
                pair: tuple[str, str], workloads: list[WorkloadSpec],
                levels: "PairLevels", thresholds: ScreenThresholds) -> list[InteractionRecord]:
    """Both screening stages for one pair, one record per workload.

    Stage B statistics are attached only where the stage-A verdict advanced
    (undetermined verdicts advance too, favoring recall). Confirmation is
    decided later, after BH correction across the whole campaign.
    """
    records = []
    for w in workloads:
        table_a = table_from_log(stage_a_log, pair, levels.stage_a[0], levels.stage_a[1],
                                 w.id, repetitions=1)
        if not table_a.is_balanced(1):
            records.append(InteractionRecord(pair=pair, workload_id=w.id,
                                             stage_a_int_pct=None, stage_a_verdict=None,
                                             unsafe_to_screen=True))
            continue
        int_pct = stage_a_int_pct(table_a)
        verdict = stage_a_verdict(int_pct, thresholds)
        rec = InteractionRecord(pair=pair, workload_id=w.id,
                                stage_a_int_pct=int_pct, stage_a_verdict=verdict)
        if verdict != VERDICT_INDEPENDENT:
            if stage_b_log is None:
                raise AnalysisError(f"{pair}: stage B log required for advancing pair")
            table_b = table_from_log(stage_b_log, pair, levels.stage_b[0], levels.stage_b[1],
                                     w.id, repetitions=thresholds.stage_b_reps)
            if not table_b.is_balanced(thresholds.stage_b_reps):
                rec.unsafe_to_screen = True
            else:
                decomp = two_way_anova(table_b, thresholds.stage_b_reps)
                rec.eta_squared = eta_squared(decomp)
                rec.partial_eta_squared = partial_eta_squared(decomp)
                rec.p_value = decomp.p_value
                rec.decomposition = decomp
        records.append(rec)
    return records


def finalize_records(records: list[InteractionRecord],
                     thresholds: ScreenThresholds) -> list[InteractionRecord]:
    """Apply BH-FDR across every tested (pair, workload) and set confirmations."""
    tested = [r for r in records if r.p_value is not None]
    qs = benjamini_hochberg([r.p_value for r in tested])
    for rec, q in zip(tested, qs):
        rec.q_value = q
        rec.confirmed = (rec.eta_squared is not None
                         and rec.eta_squared > thresholds.eta2_min
                         and q < thresholds.q_max)
    return records


@dataclass
class PairLevels:
    """Factor levels chosen for one pair: ([levels of a], [levels of b]) per stage."""

    stage_a: tuple[list[Any], list[Any]]
    stage_b: tuple[list[Any], list[Any]]


def choose_pair_levels(pair: tuple[str, str], report: SensitivityReport,
                       space: ParameterSpace, thresholds: ScreenThresholds,
                       interior: bool = False) -> PairLevels:
    """Factor levels for both stages from the pair's sensitivity safe ranges."""
    per_param = []
    for name in pair:
        profile = report.profile(name)
        spec = space.get(name)
        a_levels = stage_a_levels(spec, profile.safe_range, interior=interior)
        b_levels = stage_b_levels(spec, profile.safe_range, thresholds.stage_b_levels,
                                  interior=interior)
        if len(a_levels) < 2 or len(b_levels) < 2:
            raise AnalysisError(
                f"{name}: safe range too narrow to screen (collapsed to one level)")
        per_param.append((a_levels, b_levels))
    return PairLevels(stage_a=(per_param[0][0], per_param[1][0]),
                      stage_b=(per_param[0][1], per_param[1][1]))
