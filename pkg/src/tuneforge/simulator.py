"""Synthetic system-under-test with planted ground truth.

The simulator composes performance multiplicatively:

    metric = base_rate * prod_i f_i(x_i) * prod_ij g_ij(x_i, x_j) * noise

where each f_i is a named response shape over the parameter's normalized
position, each g_ij is a bilinear coupling reaching ``1 + strength`` at the
high-high corner, and noise is multiplicative lognormal. Because every term
has a closed form, analyses downstream (CV, Int%, eta squared, grid optima)
can be checked against hand-evaluated values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .errors import CrashError, ParameterError
from .space import Configuration, ParameterSpace, WorkloadSpec

SHAPES = ("linear-up", "linear-down", "quadratic-peak", "step", "flat")


@dataclass(frozen=True)
class Response:
    """Per-parameter multiplier over the normalized position n in [0, 1].

    linear-up        1 + strength * n
    linear-down      1 + strength * (1 - n)
    quadratic-peak   1 + strength * (1 - ((n - peak) / w)^2), w = max(peak, 1-peak)
    step             low_mult below threshold, high_mult at or above
    flat             1
    """

    shape: str = "flat"
    strength: float = 0.0
    peak: float = 0.5
    threshold: float = 0.5
    low_mult: float = 1.0
    high_mult: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ParameterError(f"unknown response shape {self.shape!r}")
        if self.shape == "step" and (self.low_mult <= 0 or self.high_mult <= 0):
            raise ParameterError("step multipliers must be positive")
        if self.shape in ("linear-up", "linear-down", "quadratic-peak") and self.strength <= -1:
            raise ParameterError("strength must keep multipliers positive")

    def multiplier(self, n: float) -> float:
        if self.shape == "flat":
            return 1.0
        if self.shape == "linear-up":
            return 1.0 + self.strength * n
        if self.shape == "linear-down":
            return 1.0 + self.strength * (1.0 - n)
        if self.shape == "quadratic-peak":
            w = max(self.peak, 1.0 - self.peak) or 1.0
            return 1.0 + self.strength * (1.0 - ((n - self.peak) / w) ** 2)
        return self.low_mult if n < self.threshold else self.high_mult

    def to_json(self) -> dict:
        d: dict[str, Any] = {"shape": self.shape}
        if self.shape in ("linear-up", "linear-down", "quadratic-peak"):
            d["strength"] = self.strength
        if self.shape == "quadratic-peak":
            d["peak"] = self.peak
        if self.shape == "step":
            d.update(threshold=self.threshold, low_mult=self.low_mult, high_mult=self.high_mult)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Response":
        return cls(shape=d.get("shape", "flat"), strength=float(d.get("strength", 0.0)),
                   peak=float(d.get("peak", 0.5)), threshold=float(d.get("threshold", 0.5)),
                   low_mult=float(d.get("low_mult", 1.0)), high_mult=float(d.get("high_mult", 1.0)))


@dataclass(frozen=True)
class Coupling:
    """Bilinear pairwise term: g = 1 + strength * n_a * n_b.

    strength > 0 rewards the high-high corner; strength in (-1, 0) penalizes
    it (an antagonistic pair whose members each look good in isolation).
    """

    a: str
    b: str
    strength: float

    def __post_init__(self):
        if self.strength <= -1:
            raise ParameterError("coupling strength must be > -1 to keep multipliers positive")

    def multiplier(self, na: float, nb: float) -> float:
        return 1.0 + self.strength * na * nb


@dataclass(frozen=True)
class CrashRegion:
    """Half-open interval (lo, hi]: the system crashes when lo < value <= hi."""

    lo: float
    hi: float

    def contains(self, value: Any) -> bool:
        try:
            v = float(value)
        except (TypeError, ValueError):
            return False
        return self.lo < v <= self.hi


@dataclass
class SimulatorModel:
    """Planted ground-truth model for one parameter space.

    ``overrides`` substitutes per-workload response functions, letting
    sensitivities differ across workloads. With sigma = 0 evaluation is
    deterministic; with all shapes flat it returns base_rate exactly.
    """

    base_rate: float
    responses: dict[str, Response] = field(default_factory=dict)
    couplings: list[Coupling] = field(default_factory=list)
    crashes: dict[str, CrashRegion] = field(default_factory=dict)
    sigma: float = 0.0
    overrides: dict[str, dict[str, Response]] = field(default_factory=dict)

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ParameterError("base_rate must be positive")
        if self.sigma < 0:
            raise ParameterError("sigma must be >= 0")

    def response_for(self, param: str, workload_id: str) -> Response:
        over = self.overrides.get(workload_id, {})
        if param in over:
            return over[param]
        return self.responses.get(param, Response())

    def true_metric(self, space: ParameterSpace, config: Configuration, workload_id: str) -> float:
        """Noise-free metric; raises CrashError inside a planted crash region."""
        resolved = space.resolve(config)
        norms = {name: space.get(name).domain.normalize(value)
                 for name, value in resolved.items()}
        for name, region in self.crashes.items():
            if name in resolved and region.contains(resolved[name]):
                raise CrashError(f"planted crash region hit: {name}={resolved[name]!r}")
        metric = self.base_rate
        for name in resolved:
            metric *= self.response_for(name, workload_id).multiplier(norms[name])
        for c in self.couplings:
            if c.a in norms and c.b in norms:
                metric *= c.multiplier(norms[c.a], norms[c.b])
        return metric

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "base_rate": self.base_rate,
            "sigma": self.sigma,
            "responses": {k: v.to_json() for k, v in sorted(self.responses.items())},
            "couplings": [{"a": c.a, "b": c.b, "strength": c.strength} for c in self.couplings],
            "crashes": {k: {"lo": v.lo, "hi": v.hi} for k, v in sorted(self.crashes.items())},
            "overrides": {w: {k: v.to_json() for k, v in sorted(m.items())}
                          for w, m in sorted(self.overrides.items())},
        }

    @classmethod
    def from_json(cls, d: dict) -> "SimulatorModel":
        return cls(
            base_rate=float(d["base_rate"]),
            sigma=float(d.get("sigma", 0.0)),
            responses={k: Response.from_json(v) for k, v in d.get("responses", {}).items()},
            couplings=[Coupling(c["a"], c["b"], float(c["strength"]))
                       for c in d.get("couplings", [])],
            crashes={k: CrashRegion(float(v["lo"]), float(v["hi"]))
                     for k, v in d.get("crashes", {}).items()},
            overrides={w: {k: Response.from_json(v) for k, v in m.items()}
                       for w, m in d.get("overrides", {}).items()},
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_json(), fh, sort_keys=False)

    @classmethod
    def load(cls, path: str) -> "SimulatorModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(yaml.safe_load(fh))


class SimulatorAdapter:
    """Harness adapter around a SimulatorModel.

    The metric for a fixed (config, workload, seed) is bit-identical across
    calls: the noise draw comes from a generator seeded with the run seed.
    """

    def __init__(self, space: ParameterSpace, model: SimulatorModel):
        self.space = space
        self.model = model
        self.max_concurrency = 64

    def measure(self, config: Configuration, workload: WorkloadSpec, seed: int) -> float:
        truth = self.model.true_metric(self.space, config, workload.id)
        if self.model.sigma == 0.0:
            return truth
        rng = np.random.Generator(np.random.PCG64(seed))
        return truth * float(np.exp(self.model.sigma * rng.standard_normal()))

    def probe(self, name: str) -> float:
        """Named read-only signals for measure steps."""
        probes = {"base_rate": self.model.base_rate, "sigma": self.model.sigma}
        if name not in probes:
            raise ParameterError(f"simulator exposes no probe named {name!r}")
        return probes[name]
