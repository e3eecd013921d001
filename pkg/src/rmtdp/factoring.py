"""Factored RMTDP construction from plan structure, and component composition."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

from .model import ActionLabel, FactoredState, FeatureSpec, ModelError, RmtdpModel
from .top import PlanNode, TopSpec, topological_layers


class FactoringError(ValueError):
    pass


@dataclass
class ComponentFactor:
    """A sub-RMTDP over a subset of features and agents.

    ``features`` are the retained feature names and ``agents`` the owned global
    agent indices (the component model numbers them 0..k-1 in this order).
    ``end(t, state)`` marks the component's end states; ``project`` overrides
    the default restriction; ``reduce_belief`` drops beliefs the component
    never reads; ``relevant(token)`` filters carried observations.
    """

    id: str
    model: RmtdpModel | None
    features: tuple = ()
    agents: tuple = ()
    predecessors: tuple = ()
    siblings: tuple = ()
    end: Callable | None = None
    project: Callable | None = None
    reduce_belief: Callable | None = None
    relevant: Callable | None = None
    layout: tuple = ()
    start_states: frozenset | None = None
    clock: str | None = None


@dataclass
class CompositionPlan:
    kind: str  # "leaf" | "parallel" | "sequential"
    factor: ComponentFactor | None = None
    children: list = field(default_factory=list)
    name: str = ""

    def leaves(self) -> list:
        if self.kind == "leaf":
            return [self.factor]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def describe(self) -> str:
        if self.kind == "leaf":
            return self.name or self.factor.id
        inner = ", ".join(c.describe() for c in self.children)
        return f"{self.kind}({inner})"

    def components(self) -> list:
        """Leaf factors in an order consistent with the sequential links."""
        return self.leaves()


def build_rmtdp(top: TopSpec, subplan: PlanNode, component_models: dict) -> CompositionPlan:
    """Recursively replace a plan by its children when they are sequential or declared independent."""
    kids = subplan.children
    if kids and subplan.constraints:
        layers = topological_layers(subplan)
        parts = []
        for layer in layers:
            if len(layer) == 1:
                parts.append(build_rmtdp(top, top.plan(layer[0]), component_models))
            elif set(layer) <= subplan.independent:
                parts.append(CompositionPlan("parallel", children=[
                    build_rmtdp(top, top.plan(n), component_models) for n in layer],
                    name="+".join(layer)))
            else:
                raise FactoringError(f"sub-plans {layer} of {subplan.name} are unordered but not declared independent")
        return parts[0] if len(parts) == 1 else CompositionPlan("sequential", children=parts, name=subplan.name)
    if kids and len(kids) >= 2 and {c.name for c in kids} <= subplan.independent:
        return CompositionPlan("parallel", children=[
            build_rmtdp(top, c, component_models) for c in kids], name=subplan.name)
    factor = component_models.get(subplan.name)
    if factor is None:
        raise FactoringError(f"no component model supplied for plan {subplan.name!r}")
    if isinstance(factor, RmtdpModel):
        factor = ComponentFactor(subplan.name, factor, tuple(f.name for f in factor.features),
                                 tuple(range(factor.n_agents)))
    return CompositionPlan("leaf", factor=factor, name=subplan.name)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def project_state(s: FactoredState, factor: ComponentFactor, layout=None) -> FactoredState:
    """Restrict ``s`` to the factor's features and agents.

    ``layout`` names the features of ``s`` in order (defaults to ``factor.layout``).
    """
    if factor.project is not None:
        return factor.project(s)
    names = tuple(layout or factor.layout)
    if not names:
        raise FactoringError(f"factor {factor.id!r} has no source layout for projection")
    index = {n: i for i, n in enumerate(names)}
    try:
        vals = tuple(s.values[index[f]] for f in factor.features)
    except KeyError as exc:
        raise FactoringError(f"state lacks feature {exc.args[0]!r}") from None
    roles = tuple(s.roles[a] for a in factor.agents) if factor.agents else s.roles
    return FactoredState(vals, roles)


def _relabel(action: ActionLabel, agent: int) -> ActionLabel:
    return action._replace(agent=agent)


# ---------------------------------------------------------------------------
# Parallel composition
# ---------------------------------------------------------------------------

class ParallelModel(RmtdpModel):
    """Product of independent factors: P and O multiply, R adds."""

    def __init__(self, factors, clock: str | None = None):
        self.factors = list(factors)
        seen_f: dict = {}
        seen_a: dict = {}
        for fac in self.factors:
            for name in fac.features:
                if name == clock:
                    continue
                if name in seen_f:
                    raise FactoringError(f"feature {name!r} shared by {seen_f[name]} and {fac.id}: not independent")
                seen_f[name] = fac.id
            for a in fac.agents:
                if a in seen_a:
                    raise FactoringError(f"agent {a} shared by {seen_a[a]} and {fac.id}: not independent")
                seen_a[a] = fac.id
        self.clock = clock
        specs = []
        if clock is not None:
            for fac in self.factors:
                if clock not in fac.features:
                    raise FactoringError(f"factor {fac.id} lacks the shared clock {clock!r}")
            specs.append(self.factors[0].model.features[self.factors[0].model.feature_index[clock]])
        self._slices = []  # per factor: positions of its features in the composed layout
        for fac in self.factors:
            fm = fac.model
            pos = []
            for name in (f.name for f in fm.features):
                if name == clock:
                    pos.append(0)
                else:
                    pos.append(len(specs))
                    specs.append(fm.features[fm.feature_index[name]])
            self._slices.append(tuple(pos))
        n = len(seen_a)
        if sorted(seen_a) != list(range(n)):
            raise FactoringError("factor agents must cover 0..n-1")
        execution, taking, joins = {}, {}, {}
        roles = []
        for fac in self.factors:
            execution.update(fac.model.execution)
            taking.update(fac.model.taking)
            joins.update(fac.model.join_names)
            roles.extend(fac.model.roles)
        horizons = {fac.model.horizon for fac in self.factors}
        if len(horizons) != 1:
            raise FactoringError("parallel factors must share one horizon")
        super().__init__(specs, n, dict.fromkeys(roles), execution, taking, horizons.pop(), [], joins)
        starts = []
        for combo in itertools.product(*(fac.model.start for fac in self.factors)):
            p = 1.0
            for _, q in combo:
                p *= q
            state = self._assemble([s for s, _ in combo])
            if state is not None:
                starts.append((state, p))
        self.start = tuple(starts)

    def split(self, s: FactoredState) -> list:
        out = []
        for fac, pos in zip(self.factors, self._slices):
            out.append(FactoredState(tuple(s.values[p] for p in pos),
                                     tuple(s.roles[a] for a in fac.agents)))
        return out

    def _assemble(self, parts):
        vals = [None] * len(self.features)
        roles = [None] * self.n_agents
        for fac, pos, st in zip(self.factors, self._slices, parts):
            for p, v in zip(pos, st.values):
                if vals[p] is not None and vals[p] != v:
                    return None
                vals[p] = v
            for a, r in zip(fac.agents, st.roles):
                roles[a] = r
        return FactoredState(tuple(vals), tuple(roles))

    def local_joint(self, joint, fac):
        return tuple(_relabel(joint[a], i) for i, a in enumerate(fac.agents))

    def transition(self, state, joint):
        parts = self.split(state)
        rows = [fac.model.transition(st, self.local_joint(joint, fac))
                for fac, st in zip(self.factors, parts)]
        out = {}
        for combo in itertools.product(*rows):
            p = 1.0
            for _, q in combo:
                p *= q
            if p == 0.0:
                continue
            s2 = self._assemble([s for s, _ in combo])
            if s2 is None:
                raise FactoringError("factors disagree on the shared clock")
            out[s2] = out.get(s2, 0.0) + p
        return list(out.items())

    def observation(self, state, joint):
        parts = self.split(state)
        rows = [fac.model.observation(st, self.local_joint(joint, fac))
                for fac, st in zip(self.factors, parts)]
        out = {}
        for combo in itertools.product(*rows):
            p = 1.0
            obs = [None] * self.n_agents
            for fac, (o, q) in zip(self.factors, combo):
                p *= q
                for a, oi in zip(fac.agents, o):
                    obs[a] = oi
            if p > 0.0:
                key = tuple(obs)
                out[key] = out.get(key, 0.0) + p
        return list(out.items())

    def reward(self, state, joint):
        return sum(fac.model.reward(st, self.local_joint(joint, fac))
                   for fac, st in zip(self.factors, self.split(state)))


def compose_parallel(factors, clock: str | None = None) -> RmtdpModel:
    return ParallelModel(factors, clock)


# ---------------------------------------------------------------------------
# Sequential composition
# ---------------------------------------------------------------------------

STAGE = "stage"


class SequentialModel(RmtdpModel):
    """Chain of factors over one layout; only the active factor's kernels apply.

    The composed state appends a ``stage`` feature.  A step taken from a state
    where the active factor's end condition holds is delegated to the next factor.
    """

    def __init__(self, factors):
        self.factors = list(factors)
        if not self.factors:
            raise FactoringError("sequential composition needs at least one factor")
        base = self.factors[0].model
        for fac in self.factors[1:]:
            if [f.name for f in fac.model.features] != [f.name for f in base.features]:
                raise FactoringError(f"factor {fac.id} does not share the chain's feature layout")
            if fac.model.n_agents != base.n_agents:
                raise FactoringError(f"factor {fac.id} has a different agent count")
        specs = list(base.features) + [FeatureSpec(STAGE, tuple(range(len(self.factors))))]
        execution, taking, joins, roles = {}, {}, {}, []
        for fac in self.factors:
            execution.update(fac.model.execution)
            taking.update(fac.model.taking)
            joins.update(fac.model.join_names)
            roles.extend(fac.model.roles)
        starts = [(self._wrap(s, 0), p) for s, p in base.start]
        super().__init__(specs, base.n_agents, dict.fromkeys(roles), execution, taking,
                         base.horizon, starts, joins)

    @staticmethod
    def _wrap(s, stage):
        return FactoredState(s.values + (stage,), s.roles)

    @staticmethod
    def _unwrap(s):
        return FactoredState(s.values[:-1], s.roles), s.values[-1]

    def active(self, state) -> int:
        inner, k = self._unwrap(state)
        while k + 1 < len(self.factors) and self._ended(self.factors[k], inner):
            nxt = self.factors[k + 1]
            if nxt.start_states is not None and inner not in nxt.start_states:
                raise FactoringError(f"end state {inner.encode()} of {self.factors[k].id} is not a start state of {nxt.id}")
            k += 1
        return k

    def _ended(self, fac, inner):
        if fac.end is None:
            return False
        t = inner.values[fac.model.feature_index[fac.clock]] if fac.clock else None
        return fac.end(t, inner)

    def transition(self, state, joint):
        k = self.active(state)
        inner, _ = self._unwrap(state)
        return [(self._wrap(s2, k), p) for s2, p in self.factors[k].model.transition(inner, joint)]

    def observation(self, state, joint):
        inner, k = self._unwrap(state)
        return self.factors[k].model.observation(inner, joint)

    def reward(self, state, joint):
        k = self.active(state)
        inner, _ = self._unwrap(state)
        return self.factors[k].model.reward(inner, joint)


def compose_sequential(factors) -> RmtdpModel:
    factors = list(factors)
    if len(factors) == 1:
        return factors[0].model
    return SequentialModel(factors)


def remove_irrelevant_features(states, factor: ComponentFactor, layout=None) -> set:
    return {project_state(s, factor, layout) for s in states}


def remove_irrelevant_observations(histories, factor: ComponentFactor) -> set:
    """Drop observation tokens the factor cannot react to, then deduplicate.

    A history is a tuple of observations; an observation is a token collection.
    Observations that become empty are removed from the history entirely.
    """
    if factor.relevant is None:
        return set(histories)
    keep = factor.relevant
    out = set()
    for hist in histories:
        reduced = []
        for obs in hist:
            if isinstance(obs, (set, frozenset, tuple, list)):
                kept = frozenset(tok for tok in obs if keep(tok))
                if kept:
                    reduced.append(kept)
            elif keep(obs):
                reduced.append(obs)
        out.add(tuple(reduced))
    return out


def check_layout(model: RmtdpModel, names) -> None:
    missing = [n for n in names if n not in model.feature_index]
    if missing:
        raise ModelError(f"unknown features {missing}")
