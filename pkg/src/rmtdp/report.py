"""Machine-readable run reports: JSON with a schema version, and CSV tables."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field

SCHEMA_VERSION = "rmtdp-report/1"
METHODS = ("noprune-obs", "noprune-bel", "maxexp", "nofail", "mdp-baseline")
CSV_FIELDS = ("domain", "agents", "method", "leaf_evaluations", "parent_bound_evaluations",
              "nodes_evaluated", "pruned_parents", "best_value", "best_allocation", "wall_time")


class ReportError(ValueError):
    pass


def _num(x):
    # JSON has no infinities; keep them representable
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _unnum(x):
    if x in ("inf", "-inf", "nan"):
        return float(x)
    return x


def _plain(obj):
    """JSON-ready copy of nested parameter values (tuples become lists, dict keys strings)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return _num(obj)


@dataclass
class BoundEntry:
    parent: list
    max_estimate: float
    component_maxima: list
    component_ids: list
    bound_kind: str
    pruned: bool = False


@dataclass
class LeafEntry:
    allocation: list
    value: float
    node_expansions: int


@dataclass
class RunReport:
    domain: str
    params: dict
    method: str
    agents: int
    best_allocation: list
    best_value: float
    stats: dict
    bounds: list = field(default_factory=list)  # BoundEntry
    leaves: list = field(default_factory=list)  # LeafEntry
    seed: int | None = None
    timing: dict = field(default_factory=dict)  # wall times; excluded from deterministic comparison
    extra: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        if self.method not in METHODS:
            raise ReportError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        # hold nested values in their JSON shape so a round trip compares equal
        self.params = _plain(self.params)
        self.extra = _plain(self.extra)
        self.best_allocation = list(self.best_allocation)

    @property
    def nodes_evaluated(self) -> int:
        return self.stats.get("leaf_evaluations", 0) + self.stats.get("parent_bound_evaluations", 0)

    def to_dict(self) -> dict:
        d = {
            "schema_version": self.schema_version,
            "domain": self.domain,
            "params": _plain(self.params),
            "method": self.method,
            "agents": self.agents,
            "seed": self.seed,
            "best_allocation": list(self.best_allocation),
            "best_value": _num(self.best_value),
            "stats": {k: _num(v) for k, v in self.stats.items()},
            "bounds": [dict(dataclasses.asdict(b), max_estimate=_num(b.max_estimate),
                            component_maxima=[_num(x) for x in b.component_maxima]) for b in self.bounds],
            "leaves": [dataclasses.asdict(x) for x in self.leaves],
            "timing": dict(self.timing),
            "extra": _plain(self.extra),
        }
        return d

    def deterministic_dict(self) -> dict:
        d = self.to_dict()
        d.pop("timing")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"unsupported schema version {d.get('schema_version')!r}")
        return cls(
            domain=d["domain"], params=d["params"], method=d["method"], agents=d["agents"],
            best_allocation=list(d["best_allocation"]), best_value=_unnum(d["best_value"]),
            stats={k: _unnum(v) for k, v in d["stats"].items()},
            bounds=[BoundEntry(**dict(b, max_estimate=_unnum(b["max_estimate"]),
                                      component_maxima=[_unnum(x) for x in b["component_maxima"]]))
                    for b in d.get("bounds", [])],
            leaves=[LeafEntry(**x) for x in d.get("leaves", [])],
            seed=d.get("seed"), timing=dict(d.get("timing", {})), extra=dict(d.get("extra", {})),
            schema_version=d["schema_version"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))

    def csv_row(self) -> dict:
        return {
            "domain": self.domain, "agents": self.agents, "method": self.method,
            "leaf_evaluations": self.stats.get("leaf_evaluations", 0),
            "parent_bound_evaluations": self.stats.get("parent_bound_evaluations", 0),
            "nodes_evaluated": self.nodes_evaluated,
            "pruned_parents": self.stats.get("pruned_parents", 0),
            "best_value": repr(self.best_value),
            "best_allocation": " ".join(str(x) for x in self.best_allocation),
            "wall_time": f"{self.timing.get('wall_time', 0.0):.6f}",
        }


@dataclass
class SweepPoint:
    percent: float
    value: float  # perturbed parameter value
    allocation: list
    value_perturbed: float  # best value on the perturbed model
    value_original: float  # that allocation evaluated on the unperturbed model


@dataclass
class SweepReport:
    domain: str
    parameter: str
    method: str
    baseline: RunReport
    points: list  # SweepPoint
    stability_range: list  # [low %, high %] around 0 with the baseline allocation
    reports: list = field(default_factory=list)  # RunReport of the search at each point
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version, "kind": "sweep", "domain": self.domain,
            "parameter": self.parameter, "method": self.method,
            "baseline": self.baseline.to_dict(),
            "points": [{k: _num(v) for k, v in dataclasses.asdict(p).items()} for p in self.points],
            "stability_range": list(self.stability_range),
            "reports": [r.to_dict() for r in self.reports],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"unsupported schema version {d.get('schema_version')!r}")
        return cls(d["domain"], d["parameter"], d["method"], RunReport.from_dict(d["baseline"]),
                   [SweepPoint(**{k: _unnum(v) for k, v in p.items()}) for p in d["points"]],
                   list(d["stability_range"]), [RunReport.from_dict(r) for r in d.get("reports", [])],
                   d["schema_version"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SweepReport":
        return cls.from_dict(json.loads(text))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["percent", "parameter_value", "allocation", "value_perturbed", "value_original"])
        for p in self.points:
            w.writerow([p.percent, repr(p.value), " ".join(map(str, p.allocation)),
                        repr(p.value_perturbed), repr(p.value_original)])
        return buf.getvalue()


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def load_report(text: str):
    d = json.loads(text)
    if isinstance(d, list):
        return [RunReport.from_dict(x) for x in d]
    if d.get("kind") == "sweep":
        return SweepReport.from_dict(d)
    return RunReport.from_dict(d)


def stats_dict(stats) -> dict:
    d = dataclasses.asdict(stats)
    d.pop("wall_time", None)
    return d
