"""Admissible allocation bounds and branch-and-bound search over allocation spaces."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .evaluator import _belief_solver, evaluate_belief, evaluate_points, forward_ends
from .factoring import CompositionPlan, project_state
from .top import OpenDecision, probe_policy

MAXEXP = "MAXEXP"
NOFAIL = "NOFAIL"
NOPRUNE = "NOPRUNE"
BOUND_KINDS = (MAXEXP, NOFAIL)
PRUNE_TOL = 1e-9


class SearchError(ValueError):
    pass


@dataclass
class BoundRecord:
    parent: object
    max_estimate: float
    component_maxima: list
    bound_kind: str
    component_ids: list = field(default_factory=list)
    wall_time: float = 0.0


@dataclass
class SearchStats:
    leaf_evaluations: int = 0
    parent_bound_evaluations: int = 0
    pruned_parents: int = 0
    total_parents: int = 0
    node_expansions: int = 0
    bound_expansions: int = 0
    wall_time: float = 0.0


@dataclass
class LeafResult:
    leaf: object
    value: float
    node_expansions: int
    wall_time: float


@dataclass
class SearchResult:
    best_leaf: object
    best_value: float
    stats: SearchStats
    bound_kind: str
    bounds: list = field(default_factory=list)
    leaves: list = field(default_factory=list)  # LeafResult, in evaluation order
    pruned: list = field(default_factory=list)  # parents pruned unexpanded

    @property
    def best_vector(self):
        return None if self.best_leaf is None else self.best_leaf.vector()


# ---------------------------------------------------------------------------
# Component units
# ---------------------------------------------------------------------------

@dataclass
class _Unit:
    id: str
    model: object
    end: object  # stop(t, s) or None for the last layer
    project: object  # state -> state or None
    reduce: object  # (state, agent, belief) -> belief or None


def _layers(plan: CompositionPlan) -> list:
    """Sequential stages of a composition plan, each a list of units.

    A parallel stage that is not last is treated as one joint unit because its
    members' end states must be known together; the last stage's members are
    bounded separately.
    """
    stages = plan.children if plan.kind == "sequential" else [plan]
    out = []
    for k, stage in enumerate(stages):
        last = k == len(stages) - 1
        factors = stage.leaves()
        if stage.kind == "sequential":
            raise SearchError("nested sequential stages are not supported")
        if len(factors) == 1 or last:
            out.append([_Unit(f.id, f.model, None if last else _end_of(f), f.project, f.reduce_belief)
                        for f in factors])
            continue
        models = {id(f.model) for f in factors}
        if len(models) != 1:
            raise SearchError(f"joint stage {stage.describe()} needs members over one shared model")
        ends = [_end_of(f) for f in factors]
        out.append([_Unit("+".join(f.id for f in factors), factors[0].model,
                          lambda t, s, ends=ends: all(e(t, s) for e in ends), None, None)])
    return out


def _end_of(factor):
    if factor.end is None:
        raise SearchError(f"component {factor.id} precedes others but declares no end condition")
    return factor.end


def _carry(points, unit: _Unit) -> list:
    """Project carried (t, state, beliefs) points into a unit and deduplicate."""
    out = {}
    for t, s, beliefs in points:
        s2 = unit.project(s) if unit.project else s
        if unit.reduce and beliefs is not None:
            beliefs = tuple(unit.reduce(s2, a, b) for a, b in enumerate(beliefs))
        out[(t, s2, beliefs)] = None
    return sorted(out, key=repr)


class _Runs:
    """Per-unit evaluations shared between leaves that consult the same decision points alike."""

    def __init__(self, unit, rule, starts):
        self.unit, self.rule, self.starts = unit, rule, starts
        self.done = []  # (consulted, values, ends)
        self.expansions = 0

    def get(self, domain, leaf):
        roles = domain.assignment(leaf).roles
        for consulted, vals, ends in self.done:
            if all(roles.get(p) == r for p, r in consulted.items()):
                return vals, ends
        consulted: dict = {}
        pol = domain.policy_for(leaf, consulted=consulted)
        vals, n = evaluate_points(self.unit.model, pol, self.rule, self.starts, stop=self.unit.end)
        self.expansions += n
        ends = None
        if self.unit.end is not None:
            ends = forward_ends(self.unit.model, pol, self.rule, self.unit.end,
                                start=[(x, 1.0) for x in self.starts])
        self.done.append((consulted, vals, ends))
        return vals, ends


def _bound(parent, leaves, domain, plan, rule, kind):
    t0 = time.perf_counter()
    probe = probe_policy(domain.incomplete)
    points = None  # None: the model's own start distribution
    partial = False  # some completion fails to reach the current stage with part of its mass
    maxima, ids = [], []
    expansions = 0
    for stage in _layers(plan):
        next_points = {}
        lost = False
        for unit in stage:
            if points is None:
                initial = tuple(rule.initial(i) for i in range(unit.model.n_agents))
                starts = [(0, s, initial) for s, p in unit.model.start if p > 0]
            else:
                starts = _carry(points, unit)
            best = 0.0 if partial or not starts else -math.inf
            # starts from which no allocation choice remains are evaluated once for all leaves
            V, counter, _ = _belief_solver(unit.model, probe, rule, unit.end, False)
            shared, dependent = [], []
            for x in starts:
                try:
                    best = max(best, V(*x))
                    shared.append(x)
                except OpenDecision:
                    dependent.append(x)
            expansions += counter[0]
            results = []
            if shared and unit.end is not None:
                results.append((shared, forward_ends(unit.model, probe, rule, unit.end,
                                                     start=[(x, 1.0) for x in shared])))
            if dependent:
                runs = _Runs(unit, rule, dependent)
                for leaf in leaves:
                    vals, ends = runs.get(domain, leaf)
                    best = max(best, max(vals))
                    if ends is not None:
                        results.append((dependent, ends))
                results = list({id(e): (xs, e) for xs, e in results}.values())
                expansions += runs.expansions
            for xs, ends in results:
                if sum(ends.values()) < len(xs) - PROB_MASS_TOL:
                    lost = True
                next_points.update(dict.fromkeys(ends))
            maxima.append(best)
            ids.append(unit.id)
        partial = partial or lost
        points = list(next_points)
    return BoundRecord(parent, sum(maxima), maxima, kind, ids, time.perf_counter() - t0), expansions


PROB_MASS_TOL = 1e-12


def maxexp_bound(parent, domain, leaves=None) -> BoundRecord:
    """Sum over plan components of the best component value any completion under ``parent`` attains."""
    leaves = leaves if leaves is not None else _leaf_children(parent)
    rec, _ = _bound(parent, leaves, domain, domain.plan, domain.rule, MAXEXP)
    return rec


def nofail_domain(domain):
    model = domain.model
    if not getattr(model, "failure_monotone", False):
        raise SearchError(f"domain {domain.name} is not declared failure-monotone")
    cached = getattr(domain, "_nofail", None)
    if cached is None:
        cached = domain.with_model(model.without_failures())
        domain._nofail = cached
    return cached


def nofail_bound(parent, domain, leaves=None) -> BoundRecord:
    """MAXEXP computed on the model with every failure outcome removed."""
    leaves = leaves if leaves is not None else _leaf_children(parent)
    nf = nofail_domain(domain)
    rec, _ = _bound(parent, leaves, nf, nf.plan, nf.rule, NOFAIL)
    return rec


def _leaf_children(node) -> list:
    return [c for c in node.children if c.is_leaf]


def parent_groups(space) -> list:
    """(node, leaf children) for every node with leaf children, in lexicographic vector order."""
    if space.is_leaf:
        return [(space, [space])]
    groups = [(n, _leaf_children(n)) for n in space.walk() if not n.is_leaf and _leaf_children(n)]
    return sorted(groups, key=lambda g: (g[0].level, g[0].vector(), g[1][0].vector()))


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

def _better(value, vector, best_value, best_vector) -> bool:
    if best_vector is None or value > best_value:
        return True
    return value == best_value and vector < best_vector


def _evaluate_leaf(domain, leaf, mode="belief") -> LeafResult:
    if mode == "belief":
        res = evaluate_belief(domain.model, domain.policy_for(leaf), domain.rule)
    else:
        res = domain.evaluate(leaf, mode)
    return LeafResult(leaf, res.value, res.stats.node_expansions, res.stats.wall_time)


def _map(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def noprune(domain, workers: int = 1, mode: str = "belief") -> SearchResult:
    """Evaluate every leaf of the allocation space (``mode="history"`` uses observation histories)."""
    t0 = time.perf_counter()
    leaves = domain.space.leaves()
    results = _map(lambda leaf: _evaluate_leaf(domain, leaf, mode), leaves, workers)
    stats = SearchStats(total_parents=len(parent_groups(domain.space)))
    best_value, best_vec, best_leaf = -math.inf, None, None
    for r in results:
        stats.leaf_evaluations += 1
        stats.node_expansions += r.node_expansions
        if _better(r.value, r.leaf.vector(), best_value, best_vec):
            best_value, best_vec, best_leaf = r.value, r.leaf.vector(), r.leaf
    stats.wall_time = time.perf_counter() - t0
    return SearchResult(best_leaf, best_value, stats, NOPRUNE, leaves=results)


def branch_and_bound(domain, bound_kind: str = MAXEXP, workers: int = 1) -> SearchResult:
    """Best allocation leaf, expanding parents in decreasing bound order.

    A parent is pruned unexpanded when its bound is below the best leaf value
    found so far (by more than ``PRUNE_TOL``).  Ties between leaves go to the
    lexicographically smallest count vector, so the answer does not depend on
    visit order or ``workers``.
    """
    if bound_kind == NOPRUNE:
        return noprune(domain, workers)
    if bound_kind not in BOUND_KINDS:
        raise SearchError(f"unknown bound kind {bound_kind!r}")
    t0 = time.perf_counter()
    groups = parent_groups(domain.space)
    stats = SearchStats(total_parents=len(groups))
    if bound_kind == NOFAIL:
        bdomain = nofail_domain(domain)
    else:
        bdomain = domain

    def compute(group):
        node, leaves = group
        return _bound(node, leaves, bdomain, bdomain.plan, bdomain.rule, bound_kind)

    computed = _map(compute, groups, workers)
    records = []
    for rec, n in computed:
        records.append(rec)
        stats.parent_bound_evaluations += 1
        stats.bound_expansions += n
    order = sorted(range(len(groups)), key=lambda i: (-records[i].max_estimate, i))

    best_value, best_vec, best_leaf = -math.inf, None, None
    evaluated, pruned = [], []
    for i in order:
        node, leaves = groups[i]
        if best_leaf is not None and records[i].max_estimate < best_value - PRUNE_TOL:
            stats.pruned_parents += 1
            pruned.append(node)
            continue
        for r in _map(lambda leaf: _evaluate_leaf(domain, leaf), leaves, workers):
            evaluated.append(r)
            stats.leaf_evaluations += 1
            stats.node_expansions += r.node_expansions
            if _better(r.value, r.leaf.vector(), best_value, best_vec):
                best_value, best_vec, best_leaf = r.value, r.leaf.vector(), r.leaf
    stats.wall_time = time.perf_counter() - t0
    return SearchResult(best_leaf, best_value, stats, bound_kind, records, evaluated, pruned)


def bound_for(kind: str, parent, domain, leaves=None) -> BoundRecord:
    if kind == MAXEXP:
        return maxexp_bound(parent, domain, leaves)
    if kind == NOFAIL:
        return nofail_bound(parent, domain, leaves)
    raise SearchError(f"unknown bound kind {kind!r}")


__all__ = [
    "BoundRecord", "SearchStats", "SearchResult", "LeafResult", "SearchError",
    "MAXEXP", "NOFAIL", "NOPRUNE", "maxexp_bound", "nofail_bound", "branch_and_bound",
    "noprune", "parent_groups", "bound_for", "project_state",
]
