"""Tunable parameter spaces, configurations within them, and workload descriptors.

A :class:`ParameterSpace` declares what can be tuned; a :class:`Configuration`
is a sparse assignment over it (unassigned parameters are implicitly at their
defaults). Spaces and workloads load from a single human-editable YAML file
with a ``schema_version`` field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterator

import yaml

from .errors import ParameterError

SCHEMA_VERSION = 1

DomainKind = str  # "continuous" | "integer" | "enum" | "boolean"


@dataclass(frozen=True)
class Domain:
    """Value domain of one parameter.

    * continuous(lo, hi): closed real interval, lo < hi
    * integer(lo, hi):    closed integer interval, lo < hi
    * enum(values):       ordered list of distinct values
    * boolean:            shorthand for enum([False, True])
    """

    kind: DomainKind
    lo: float | None = None
    hi: float | None = None
    values: tuple[Any, ...] = ()

    def __post_init__(self):
        if self.kind in ("continuous", "integer"):
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise ParameterError(f"{self.kind} domain requires lo < hi, got ({self.lo}, {self.hi})")
        elif self.kind == "enum":
            if not self.values:
                raise ParameterError("enum domain requires a non-empty value list")
            if len(set(map(repr, self.values))) != len(self.values):
                raise ParameterError("enum domain values must be unique")
        elif self.kind == "boolean":
            object.__setattr__(self, "values", (False, True))
        else:
            raise ParameterError(f"unknown domain kind {self.kind!r}")

    @property
    def ordered_values(self) -> tuple[Any, ...]:
        """Ordinal value list for enum-like domains."""
        if self.kind not in ("enum", "boolean"):
            raise ParameterError(f"{self.kind} domain has no enumerated values")
        return self.values

    def contains(self, value: Any) -> bool:
        if self.kind == "continuous":
            return isinstance(value, (int, float)) and not isinstance(value, bool) \
                and self.lo <= float(value) <= self.hi
        if self.kind == "integer":
            return isinstance(value, int) and not isinstance(value, bool) \
                and self.lo <= value <= self.hi
        return value in self.values

    def ordinal(self, value: Any) -> int:
        """Declaration-position encoding for enum/boolean values."""
        return self.values.index(value)

    def normalize(self, value: Any) -> float:
        """Position of value within the domain, mapped to [0, 1]."""
        if self.kind in ("continuous", "integer"):
            return (float(value) - self.lo) / (self.hi - self.lo)
        n = len(self.values)
        if n == 1:
            return 0.0
        return self.ordinal(value) / (n - 1)

    def describe(self) -> str:
        if self.kind in ("continuous", "integer"):
            return f"{self.kind}[{self.lo}, {self.hi}]"
        return f"{self.kind}{list(self.values)}"

    def to_json(self) -> dict:
        d: dict[str, Any] = {"type": self.kind}
        if self.kind in ("continuous", "integer"):
            d["lo"] = self.lo
            d["hi"] = self.hi
        elif self.kind == "enum":
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Domain":
        kind = d.get("type")
        if kind in ("continuous", "integer"):
            lo, hi = d["lo"], d["hi"]
            if kind == "integer":
                lo, hi = int(lo), int(hi)
            return cls(kind=kind, lo=lo, hi=hi)
        if kind == "enum":
            return cls(kind="enum", values=tuple(d["values"]))
        if kind == "boolean":
            return cls(kind="boolean")
        raise ParameterError(f"unknown domain kind {kind!r}")


@dataclass(frozen=True)
class ParameterSpec:
    """One tunable parameter: its domain, default, and metadata."""

    name: str
    domain: Domain
    default: Any
    unit: str = ""
    restart_required: bool = False
    scale: str = "linear"  # "linear" | "log"; log spacing for knobs spanning magnitudes

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ParameterError("parameter name must be a non-empty string")
        if self.domain.kind == "integer" and isinstance(self.default, float):
            object.__setattr__(self, "default", int(self.default))
        if not self.domain.contains(self.default):
            raise ParameterError(
                f"default {self.default!r} of {self.name!r} lies outside {self.domain.describe()}")
        if self.scale not in ("linear", "log"):
            raise ParameterError(f"scale must be linear or log, got {self.scale!r}")
        if self.scale == "log":
            if self.domain.kind not in ("continuous", "integer") or self.domain.lo <= 0:
                raise ParameterError(f"log scale on {self.name!r} requires a numeric domain with lo > 0")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "domain": self.domain.to_json(),
            "default": self.default,
            "unit": self.unit,
            "restart_required": self.restart_required,
            "scale": self.scale,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ParameterSpec":
        return cls(
            name=d["name"],
            domain=Domain.from_json(d["domain"]),
            default=d["default"],
            unit=d.get("unit", ""),
            restart_required=bool(d.get("restart_required", False)),
            scale=d.get("scale", "linear"),
        )


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered collection of parameter specs with unique names."""

    parameters: tuple[ParameterSpec, ...]

    def __post_init__(self):
        if isinstance(self.parameters, list):
            object.__setattr__(self, "parameters", tuple(self.parameters))
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ParameterError(f"duplicate parameter names: {dupes}")
        object.__setattr__(self, "_by_name", {p.name: p for p in self.parameters})

    def __iter__(self) -> Iterator[ParameterSpec]:
        return iter(self.parameters)

    def __len__(self) -> int:
        return len(self.parameters)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> ParameterSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise ParameterError(f"unknown parameter {name!r}") from None

    def names(self) -> list[str]:
        return [p.name for p in self.parameters]

    def defaults(self) -> "Configuration":
        """The all-defaults configuration (empty assignment map)."""
        return Configuration({})

    def resolve(self, config: "Configuration") -> dict[str, Any]:
        """Full name -> value map with unassigned parameters at defaults."""
        out = {p.name: p.default for p in self.parameters}
        out.update(config.assignments)
        return out

    def space_hash(self) -> str:
        """Stable content hash used as a campaign fingerprint component."""
        blob = json.dumps([p.to_json() for p in self.parameters], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "parameters": [p.to_json() for p in self.parameters]}

    @classmethod
    def from_json(cls, d: dict) -> "ParameterSpace":
        return cls(tuple(ParameterSpec.from_json(p) for p in d["parameters"]))


@dataclass(frozen=True)
class Configuration:
    """Sparse parameter assignment; unassigned parameters mean 'default'."""

    assignments: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "assignments", dict(self.assignments))
        object.__setattr__(self, "_canonical", None)
        object.__setattr__(self, "_hash", None)

    def canonical(self) -> str:
        """Deterministic string form, used for identity and hashing."""
        if self._canonical is None:
            object.__setattr__(self, "_canonical", json.dumps(self.assignments, sort_keys=True))
        return self._canonical

    def config_hash(self) -> str:
        if self._hash is None:
            object.__setattr__(
                self, "_hash", hashlib.sha256(self.canonical().encode()).hexdigest()[:16])
        return self._hash

    def with_assignment(self, name: str, value: Any) -> "Configuration":
        merged = dict(self.assignments)
        merged[name] = value
        return Configuration(merged)

    def is_default(self) -> bool:
        return not self.assignments

    def __eq__(self, other) -> bool:
        return isinstance(other, Configuration) and self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())


@dataclass(frozen=True)
class WorkloadSpec:
    """One benchmark workload and the metric it optimizes."""

    id: str
    metric_name: str = "throughput"
    direction: str = "maximize"  # "maximize" | "minimize"

    def __post_init__(self):
        if not self.id:
            raise ParameterError("workload id must be non-empty")
        if self.direction not in ("maximize", "minimize"):
            raise ParameterError(f"direction must be maximize or minimize, got {self.direction!r}")

    def better(self, a: float, b: float) -> bool:
        """True when metric a beats metric b under this workload's direction."""
        return a > b if self.direction == "maximize" else a < b

    def to_json(self) -> dict:
        return {"id": self.id, "metric_name": self.metric_name, "direction": self.direction}

    @classmethod
    def from_json(cls, d: dict) -> "WorkloadSpec":
        return cls(id=d["id"], metric_name=d.get("metric_name", "throughput"),
                   direction=d.get("direction", "maximize"))


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str]


def validate_configuration(space: ParameterSpace, config: Configuration) -> ValidationResult:
    """Check every assignment against its parameter's domain.

    Unknown names and out-of-domain values become violation entries rather
    than exceptions; the all-defaults configuration always validates.
    """
    violations: list[str] = []
    for name in sorted(config.assignments):
        value = config.assignments[name]
        if name not in space:
            violations.append(f"unknown parameter {name}")
            continue
        spec = space.get(name)
        if not spec.domain.contains(value):
            violations.append(f"{name}={value!r} out of range {spec.domain.describe()}")
    return ValidationResult(ok=not violations, violations=violations)


def level_grid(spec: ParameterSpec, count: int) -> list[Any]:
    """Ordered probe values spread across a parameter's domain.

    Continuous/integer grids include both endpoints and space levels uniformly
    (geometrically for ``scale: log``); integer grids deduplicate after
    rounding and may shrink, but never below 2 values. Enum grids pick evenly
    spaced positions in declaration order.
    """
    if not 2 <= count <= 9:
        raise ParameterError(f"level count must be in [2, 9], got {count}")
    dom = spec.domain
    if dom.kind in ("enum", "boolean"):
        n = len(dom.ordered_values)
        if count > n:
            raise ParameterError(
                f"level count {count} exceeds cardinality {n} of {spec.name!r}")
        if count == n:
            return list(dom.ordered_values)
        idxs = sorted({round(k * (n - 1) / (count - 1)) for k in range(count)})
        return [dom.ordered_values[i] for i in idxs]

    lo, hi = float(dom.lo), float(dom.hi)
    if spec.scale == "log":
        ratio = hi / lo
        raw = [lo * ratio ** (k / (count - 1)) for k in range(count)]
    else:
        raw = [lo + k * (hi - lo) / (count - 1) for k in range(count)]
    raw[0], raw[-1] = lo, hi  # endpoints exactly, no float drift

    if dom.kind == "integer":
        ints: list[int] = []
        for v in raw:
            r = int(round(v))
            if r not in ints:
                ints.append(r)
        return ints
    return raw


def snap_to_domain(spec: ParameterSpec, value: float) -> Any:
    """Clamp and round a raw numeric into a legal domain value."""
    dom = spec.domain
    if dom.kind == "integer":
        return int(min(dom.hi, max(dom.lo, round(value))))
    if dom.kind == "continuous":
        return float(min(dom.hi, max(dom.lo, value)))
    raise ParameterError(f"cannot snap into {dom.kind} domain")


def _check_schema_version(doc: dict, path: str) -> None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParameterError(f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")


def load_space(path: str) -> ParameterSpace:
    """Read the ``parameters`` section of a space/workload declaration file."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "parameters" not in doc:
        raise ParameterError(f"{path}: no 'parameters' section")
    _check_schema_version(doc, path)
    return ParameterSpace.from_json(doc)


def load_workloads(path: str) -> list[WorkloadSpec]:
    """Read the ``workloads`` section of a declaration file."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "workloads" not in doc:
        raise ParameterError(f"{path}: no 'workloads' section")
    _check_schema_version(doc, path)
    workloads = [WorkloadSpec.from_json(w) for w in doc["workloads"]]
    ids = [w.id for w in workloads]
    if len(set(ids)) != len(ids):
        raise ParameterError(f"{path}: duplicate workload ids")
    return workloads


def dump_space(space: ParameterSpace, workloads: list[WorkloadSpec] | None = None) -> str:
    """Serialize a space (and optionally workloads) back to YAML."""
    doc = space.to_json()
    if workloads is not None:
        doc["workloads"] = [w.to_json() for w in workloads]
    return yaml.safe_dump(doc, sort_keys=False)
