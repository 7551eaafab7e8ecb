"""Shared fixtures and independent oracles for the test suite.

The oracles here are deliberately written as plain nested loops over raw
values, independent of the library's vectorized/algebraic implementations,
so agreement is meaningful.
"""

from __future__ import annotations

import math
from itertools import product

from tuneforge.space import Configuration, Domain, ParameterSpace, ParameterSpec, WorkloadSpec


def unit_space(names, default=0.0):
    """Continuous [0, 1] parameters, default at the low end."""
    return ParameterSpace(tuple(
        ParameterSpec(name=n, domain=Domain("continuous", 0.0, 1.0), default=default)
        for n in names))


def one_workload(direction="maximize"):
    return [WorkloadSpec(id="w0", metric_name="tps", direction=direction)]


# ---------------------------------------------------------------------------
# Brute-force two-way ANOVA oracle: direct mean-subtraction sums over the
# raw grid, one observation at a time.
# ---------------------------------------------------------------------------

def anova_oracle(cells):
    """cells[i][j] -> list of r raw values. Returns dict of SS, df, F."""
    a = len(cells)
    b = len(cells[0])
    r = len(cells[0][0])

    total = 0.0
    n = 0
    for i in range(a):
        for j in range(b):
            for v in cells[i][j]:
                total += v
                n += 1
    grand = total / n

    cell_mean = [[sum(cells[i][j]) / len(cells[i][j]) for j in range(b)] for i in range(a)]
    row_mean = []
    for i in range(a):
        s = 0.0
        c = 0
        for j in range(b):
            for v in cells[i][j]:
                s += v
                c += 1
        row_mean.append(s / c)
    col_mean = []
    for j in range(b):
        s = 0.0
        c = 0
        for i in range(a):
            for v in cells[i][j]:
                s += v
                c += 1
        col_mean.append(s / c)

    ss_a = 0.0
    for i in range(a):
        ss_a += b * r * (row_mean[i] - grand) ** 2
    ss_b = 0.0
    for j in range(b):
        ss_b += a * r * (col_mean[j] - grand) ** 2
    ss_ab = 0.0
    for i in range(a):
        for j in range(b):
            ss_ab += r * (cell_mean[i][j] - row_mean[i] - col_mean[j] + grand) ** 2
    ss_e = 0.0
    ss_total = 0.0
    for i in range(a):
        for j in range(b):
            for v in cells[i][j]:
                ss_e += (v - cell_mean[i][j]) ** 2
                ss_total += (v - grand) ** 2

    df_ab = (a - 1) * (b - 1)
    df_e = a * b * (r - 1)
    f = math.inf if ss_e == 0 else (ss_ab / df_ab) / (ss_e / df_e)
    return {"ss_a": ss_a, "ss_b": ss_b, "ss_ab": ss_ab, "ss_e": ss_e,
            "ss_total": ss_total, "df_ab": df_ab, "df_e": df_e, "f": f,
            "eta2": 0.0 if ss_total == 0 else ss_ab / ss_total}


# ---------------------------------------------------------------------------
# Brute-force CV from a raw measurement log: regroup and average by hand.
# ---------------------------------------------------------------------------

def cv_oracle(log, param, workload_id):
    """(max level mean - min level mean) / baseline mean, straight from records."""
    by_level = {}
    baseline = []
    for m in log:
        if m.workload_id != workload_id or m.outcome != "ok":
            continue
        if not m.config.assignments:
            baseline.append(m.metric_value)
        elif list(m.config.assignments) == [param]:
            by_level.setdefault(m.config.assignments[param], []).append(m.metric_value)
    level_means = [sum(v) / len(v) for v in by_level.values()]
    base = sum(baseline) / len(baseline)
    return (max(level_means) - min(level_means)) / base


# ---------------------------------------------------------------------------
# Brute-force grid optimizer over the true (noise-free) simulator model.
# ---------------------------------------------------------------------------

def global_grid_argmax(model, space, grid, workload_id="w0", maximize=True):
    """Exhaustive search of the product grid on the analytic model."""
    names = sorted(grid)
    best = None
    for combo in product(*(grid[n] for n in names)):
        config = Configuration(dict(zip(names, combo)))
        value = model.true_metric(space, config, workload_id)
        key = config.canonical()
        if best is None:
            best = (value, key, config)
        else:
            better = value > best[0] if maximize else value < best[0]
            if better or (value == best[0] and key < best[1]):
                best = (value, key, config)
    return best[2], best[0]


# ---------------------------------------------------------------------------
# A small planted campaign shared by docgen/executor/CLI tests: one strong
# 2-parameter coupling, two sensitive isolates, two flat parameters.
# ---------------------------------------------------------------------------

SMALL_NAMES = ["pa", "pb", "pc", "pd", "pe", "pf"]


def small_model(sigma=0.005):
    from tuneforge.simulator import Coupling, Response, SimulatorModel
    return SimulatorModel(
        base_rate=1000.0, sigma=sigma,
        responses={
            "pa": Response(shape="linear-up", strength=0.12),
            "pb": Response(shape="linear-up", strength=0.10),
            "pc": Response(shape="linear-up", strength=0.20),
            "pd": Response(shape="linear-down", strength=0.15),
        },
        couplings=[Coupling("pa", "pb", 1.5)])


def shifted_small_model(sigma=0.005):
    """Same space, different ground truth: pc and pd reverse direction."""
    from tuneforge.simulator import Coupling, Response, SimulatorModel
    return SimulatorModel(
        base_rate=1000.0, sigma=sigma,
        responses={
            "pa": Response(shape="linear-up", strength=0.12),
            "pb": Response(shape="linear-up", strength=0.10),
            "pc": Response(shape="linear-down", strength=0.20),
            "pd": Response(shape="linear-up", strength=0.15),
        },
        couplings=[Coupling("pa", "pb", 1.5)])


def run_small_pipeline(directory, seed=42, compile_doc=True):
    """Profile + screen + joint (+ compile) the small planted campaign."""
    from tuneforge.campaign import Campaign
    from tuneforge.interaction import ScreenThresholds
    from tuneforge.simulator import SimulatorAdapter

    space = unit_space(SMALL_NAMES)
    workloads = one_workload()
    model = small_model()
    adapter = SimulatorAdapter(space, model)
    campaign = Campaign(str(directory), space, workloads, seed=seed)
    sens = campaign.profile(adapter, levels_per_param=5, repetitions=3, tau_s=0.05)
    inter = campaign.screen(adapter, ScreenThresholds())
    optima = campaign.joint(adapter, repetitions=3)
    doc = campaign.compile() if compile_doc else None
    return {
        "campaign": campaign, "space": space, "workloads": workloads,
        "model": model, "adapter": adapter,
        "sensitivity": sens, "interaction": inter, "optima": optima, "doc": doc,
    }
