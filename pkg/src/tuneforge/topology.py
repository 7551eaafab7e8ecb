"""Correlation graph construction and component-wise joint optimization.

Confirmed interactions become edges of a weighted undirected graph over the
top-k parameters; its connected components are the groups that must be tuned
jointly. Each multi-parameter component gets a full-factorial grid search
over its members' stage-B levels, with everything else pinned at defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from typing import Any

from .errors import AnalysisError, ParameterError
from .harness import (OUTCOME_OK, Adapter, MeasurementLog, PlanEntry,
                      mean_ok_metric, run_plan)
from .interaction import InteractionReport, stage_b_levels
from .sensitivity import SensitivityReport
from .space import Configuration, ParameterSpace, WorkloadSpec

DEFAULT_COMPONENT_CAP = 5


class UnionFind:
    """Disjoint sets over hashable items with path compression."""

    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def groups(self) -> list[list]:
        by_root: dict[Any, list] = {}
        for x in self.parent:
            by_root.setdefault(self.find(x), []).append(x)
        return [sorted(g) for g in by_root.values()]


@dataclass(frozen=True)
class GraphEdge:
    """One confirmed interaction: endpoints, effect size, and test statistics."""

    a: str
    b: str
    eta_squared: float
    p_value: float | None = None
    q_value: float | None = None

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "eta_squared": self.eta_squared,
                "p_value": self.p_value, "q_value": self.q_value}

    @classmethod
    def from_json(cls, d: dict) -> "GraphEdge":
        return cls(a=d["a"], b=d["b"], eta_squared=float(d["eta_squared"]),
                   p_value=d.get("p_value"), q_value=d.get("q_value"))


@dataclass
class CorrelationGraph:
    """Weighted interaction graph plus its connected-component partition."""

    nodes: list[str]
    edges: list[GraphEdge]
    components: list[list[str]]

    def component_of(self, name: str) -> list[str]:
        for comp in self.components:
            if name in comp:
                return comp
        raise ParameterError(f"{name!r} is not a graph node")

    def multi_components(self) -> list[list[str]]:
        return [c for c in self.components if len(c) > 1]

    def isolates(self) -> list[str]:
        return [c[0] for c in self.components if len(c) == 1]

    def to_json(self) -> dict:
        return {
            "nodes": self.nodes,
            "edges": [e.to_json() for e in self.edges],
            "components": self.components,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CorrelationGraph":
        return cls(nodes=list(d["nodes"]),
                   edges=[GraphEdge.from_json(e) for e in d["edges"]],
                   components=[list(c) for c in d["components"]])


def build_graph(top_k: list[str], report: InteractionReport) -> CorrelationGraph:
    """Graph over the top-k nodes with one edge per confirmed pair.

    Each edge carries the largest eta^2 among the workloads that confirmed
    the pair, with that record's p and q. Components are ordered by their
    smallest member name, members sorted, so the decomposition is
    deterministic.
    """
    nodes = sorted(top_k)
    node_set = set(nodes)
    edges = []
    for (a, b), rec in sorted(report.confirmed_records().items()):
        if a not in node_set or b not in node_set:
            raise AnalysisError(f"confirmed pair ({a}, {b}) outside the top-k node set")
        edges.append(GraphEdge(a=a, b=b, eta_squared=rec.eta_squared,
                               p_value=rec.p_value, q_value=rec.q_value))
    uf = UnionFind(nodes)
    for e in edges:
        uf.union(e.a, e.b)
    components = sorted(uf.groups(), key=lambda c: c[0])
    return CorrelationGraph(nodes=nodes, edges=edges, components=components)


@dataclass
class JointSearchPlan:
    """Full-factorial grid over one component's members."""

    component: list[str]
    grid: dict[str, list[Any]]
    repetitions: int
    workloads: list[WorkloadSpec]

    @property
    def budget(self) -> int:
        cells = 1
        for levels in self.grid.values():
            cells *= len(levels)
        return cells * self.repetitions * len(self.workloads)

    def grid_configs(self) -> list[Configuration]:
        """Grid points in lexicographic parameter/value order."""
        names = sorted(self.grid)
        configs = []
        for combo in product(*(self.grid[n] for n in names)):
            configs.append(Configuration(dict(zip(names, combo))))
        return configs

    def entries(self) -> list[PlanEntry]:
        plan: list[PlanEntry] = []
        for config in self.grid_configs():
            for w in self.workloads:
                for rep in range(self.repetitions):
                    plan.append((config, w, rep))
        return plan


@dataclass
class JointOptimum:
    """Best grid point of one component under one workload."""

    component: list[str]
    workload_id: str
    best_config: Configuration
    best_metric: float
    improvement_vs_default: float

    def to_json(self) -> dict:
        return {
            "component": self.component,
            "workload_id": self.workload_id,
            "best_config": self.best_config.assignments,
            "best_metric": self.best_metric,
            "improvement_vs_default": self.improvement_vs_default,
        }

    @classmethod
    def from_json(cls, d: dict) -> "JointOptimum":
        return cls(component=list(d["component"]), workload_id=d["workload_id"],
                   best_config=Configuration(d["best_config"]),
                   best_metric=float(d["best_metric"]),
                   improvement_vs_default=float(d["improvement_vs_default"]))


@dataclass
class OptimaReport:
    campaign_id: str
    space_hash: str
    graph: CorrelationGraph
    optima: list[JointOptimum]
    baseline_means: dict[str, float]
    runs_used: int = 0

    def optimum_for(self, component: list[str], workload_id: str) -> JointOptimum | None:
        for o in self.optima:
            if o.component == component and o.workload_id == workload_id:
                return o
        return None

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "campaign_id": self.campaign_id,
            "space_hash": self.space_hash,
            "graph": self.graph.to_json(),
            "optima": [o.to_json() for o in self.optima],
            "baseline_means": self.baseline_means,
            "runs_used": self.runs_used,
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, d: dict) -> "OptimaReport":
        return cls(campaign_id=d["campaign_id"], space_hash=d["space_hash"],
                   graph=CorrelationGraph.from_json(d["graph"]),
                   optima=[JointOptimum.from_json(o) for o in d["optima"]],
                   baseline_means=dict(d["baseline_means"]),
                   runs_used=int(d.get("runs_used", 0)))

    @classmethod
    def load(cls, path: str) -> "OptimaReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def plan_joint_search(component: list[str], report: SensitivityReport,
                      space: ParameterSpace, workloads: list[WorkloadSpec],
                      levels: int = 4, repetitions: int = 3,
                      component_cap: int = DEFAULT_COMPONENT_CAP) -> JointSearchPlan:
    """Grid plan over a component, reusing the stage-B level choice.

    Components above the cap signal a profiling anomaly and are rejected
    rather than searched (the budget grows as levels^size).
    """
    if len(component) < 2:
        raise ParameterError("joint search needs a component of at least 2 parameters")
    if len(component) > component_cap:
        raise AnalysisError(
            f"component {component} exceeds the size cap {component_cap}; "
            "decompose it manually before joint search")
    grid = {}
    for name in component:
        profile = report.profile(name)
        grid[name] = stage_b_levels(space.get(name), profile.safe_range, levels,
                                    factorial=False)
    return JointSearchPlan(component=sorted(component), grid=grid,
                           repetitions=repetitions, workloads=list(workloads))


def _grid_means(log: MeasurementLog, configs: list[Configuration],
                workload_id: str) -> dict[str, float]:
    by_hash: dict[str, list[float]] = {}
    for m in log:
        if m.workload_id == workload_id and m.outcome == OUTCOME_OK:
            by_hash.setdefault(m.config.config_hash(), []).append(m.metric_value)
    means = {}
    for c in configs:
        vals = by_hash.get(c.config_hash())
        if vals:
            means[c.config_hash()] = sum(vals) / len(vals)
    return means


def _pick_best(configs: list[Configuration], means: dict[str, float],
               workload: WorkloadSpec) -> tuple[Configuration, float]:
    """Direction-aware argbest; ties go to the lexicographically smallest config."""
    best: tuple[Configuration, float] | None = None
    for c in sorted(configs, key=lambda c: c.canonical()):
        h = c.config_hash()
        if h not in means:
            continue
        if best is None or workload.better(means[h], best[1]):
            best = (c, means[h])
    if best is None:
        raise AnalysisError(f"every grid point failed on workload {workload.id}")
    return best


def measure_baselines(adapter: Adapter, workloads: list[WorkloadSpec],
                      repetitions: int, seed: int,
                      parallelism: int = 1) -> tuple[dict[str, float], MeasurementLog]:
    """Mean all-defaults metric per workload, measured in this session."""
    plan: list[PlanEntry] = [(adapter.space.defaults(), w, rep)
                             for w in workloads for rep in range(repetitions)]
    log = run_plan(adapter, plan, parallelism=parallelism, seed=seed)
    means = {}
    for w in workloads:
        vals = [m.metric_value for m in log
                if m.workload_id == w.id and m.outcome == OUTCOME_OK]
        if not vals:
            raise AnalysisError(f"baseline measurement failed on workload {w.id}")
        means[w.id] = sum(vals) / len(vals)
    return means, log


def optimize_component(adapter: Adapter, plan: JointSearchPlan, seed: int,
                       baseline_means: dict[str, float],
                       parallelism: int = 1,
                       cached: MeasurementLog | None = None) -> tuple[list[JointOptimum], MeasurementLog]:
    """Run the grid and return the per-workload optima.

    Cells already present in ``cached`` (e.g. stage-B measurements of a
    2-parameter component) are reused instead of re-measured.
    """
    log = run_plan(adapter, plan.entries(), parallelism=parallelism, seed=seed,
                   existing=cached)
    configs = plan.grid_configs()
    optima = []
    for w in plan.workloads:
        means = _grid_means(log, configs, w.id)
        best_config, best_metric = _pick_best(configs, means, w)
        base = baseline_means[w.id]
        optima.append(JointOptimum(
            component=plan.component, workload_id=w.id,
            best_config=best_config, best_metric=best_metric,
            improvement_vs_default=(best_metric - base) / base,
        ))
    return optima, log


def independent_baseline(adapter: Adapter, component: list[str],
                         report: SensitivityReport, space: ParameterSpace,
                         workload: WorkloadSpec, repetitions: int, seed: int,
                         levels: int = 4,
                         parallelism: int = 1) -> tuple[Configuration, float, MeasurementLog]:
    """Tune each member in isolation, then measure the combined configuration.

    This is the independence assumption made concrete: per-parameter 1-D
    sweeps at defaults-elsewhere, argbest each, and one measurement of the
    combination. With real interactions present the combination can be
    strictly worse than the joint-grid optimum.
    """
    if not component:
        raise ParameterError("component must be non-empty")
    plan: list[PlanEntry] = []
    per_param_levels: dict[str, list[Any]] = {}
    for name in sorted(component):
        profile = report.profile(name)
        per_param_levels[name] = stage_b_levels(space.get(name), profile.safe_range,
                                                levels, factorial=False)
        for v in per_param_levels[name]:
            for rep in range(repetitions):
                plan.append((Configuration({name: v}), workload, rep))
    log = run_plan(adapter, plan, parallelism=parallelism, seed=seed)

    combined: dict[str, Any] = {}
    for name, lvls in per_param_levels.items():
        configs = [Configuration({name: v}) for v in lvls]
        means = _grid_means(log, configs, workload.id)
        best_config, _ = _pick_best(configs, means, workload)
        combined[name] = best_config.assignments[name]

    combo = Configuration(combined)
    combo_plan: list[PlanEntry] = [(combo, workload, rep) for rep in range(repetitions)]
    # A one-parameter component's combination coincides with a sweep config;
    # reuse those measurements instead of re-appending their keys.
    combo_log = run_plan(adapter, combo_plan, parallelism=parallelism, seed=seed,
                         existing=log)
    metric = mean_ok_metric(m for m in combo_log if m.config == combo)
    if metric is None:
        raise AnalysisError(f"independent combination failed on workload {workload.id}")
    for m in combo_log:
        if not log.has(m.config, m.workload_id, m.repetition):
            log.append(m)
    return combo, metric, log
