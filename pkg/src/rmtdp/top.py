"""Team-oriented programs: organization and plan hierarchies, belief states,
the reactive plan interpreter and TOP-derived policies.

Document format::

    org {
      TaskForce {
        ScoutingTeam {
          SctTeamA : memberSctTeamA join joinSctTeamA class helo
        }
        AmbulanceTeamA|c : ambulanceA class ambulance
      }
    }
    criticality { memberSctTeamA = 1; memberTransportTeam = 0 }
    reallocate { trigger: CriticalFailure(DoScouting) & atStart; failed: Failed }
    plan ExecuteMission {
      team: TaskForce;
      body: [DoScouting, DoTransport, moveForward if ~atEnd];
      combinator: AND;
      constraints: DoScouting -> DoTransport;
      independent: DoTransport, RemainingScouts;
    }

``#`` starts a comment.  The first plan block is the root.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import NamedTuple

from .conditions import FALSE, TRUE, Cond, ConditionError, EvalContext, parse_condition
from .model import BELIEF, NOOP, Decision, JointPolicy, LocalPolicy, execute, noop, take


class TopError(ValueError):
    pass


class TopParseError(TopError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class CompletenessError(TopError):
    pass


# ---------------------------------------------------------------------------
# Belief states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BeliefState:
    props: frozenset = frozenset()
    scalars: tuple = ()  # sorted (name, int) pairs

    @classmethod
    def make(cls, props=(), **scalars) -> "BeliefState":
        return cls(frozenset(props), tuple(sorted(scalars.items())))

    def get(self, name, default=None):
        for k, v in self.scalars:
            if k == name:
                return v
        return default

    def scalar_dict(self) -> dict:
        return dict(self.scalars)

    def evolve(self, add=(), remove=(), **scalars) -> "BeliefState":
        props = (self.props - frozenset(remove)) | frozenset(add)
        if scalars:
            merged = dict(self.scalars)
            merged.update(scalars)
            sc = tuple(sorted(merged.items()))
        else:
            sc = self.scalars
        return BeliefState(props, sc)

    def sort_key(self):
        return (tuple(sorted(self.props)), self.scalars)

    def __str__(self):
        parts = sorted(self.props) + [f"{k}={v}" for k, v in self.scalars]
        return "{" + ", ".join(parts) + "}"


class BeliefUpdateRule:
    """Deterministic map (belief, observation) -> belief plus each agent's initial belief."""

    def initial(self, agent: int) -> BeliefState:
        return BeliefState()

    def update(self, belief, obs):
        raise NotImplementedError


def belief_update(rule: BeliefUpdateRule, belief, obs):
    return rule.update(belief, obs)


def role_of(belief: BeliefState):
    for p in belief.props:
        if p.startswith("Role(") and p.endswith(")"):
            return p[5:-1]
    return None


ABSENT_PROP = "Absent"
ABSENT_BELIEF = BeliefState(frozenset({ABSENT_PROP}))


# ---------------------------------------------------------------------------
# Organization and plan hierarchies
# ---------------------------------------------------------------------------

@dataclass
class OrgNode:
    name: str
    children: list = field(default_factory=list)
    role: str | None = None
    join: str | None = None
    agent_class: str | None = None
    message: str | None = None
    parent: "OrgNode | None" = field(default=None, repr=False, compare=False)

    @property
    def is_leaf(self):
        return not self.children

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> list:
        return [n for n in self.walk() if n.is_leaf]

    def find(self, name):
        for n in self.walk():
            if n.name == name:
                return n
        return None

    def leaf_for_role(self, role):
        for n in self.leaves():
            if n.role == role:
                return n
        return None

    def contains(self, other: "OrgNode") -> bool:
        n = other
        while n is not None:
            if n is self:
                return True
            n = n.parent
        return False

    def height(self) -> int:
        return 0 if not self.children else 1 + max(c.height() for c in self.children)


class BodyEntry(NamedTuple):
    name: str
    condition: Cond
    is_plan: bool
    text: str


@dataclass
class PlanNode:
    name: str
    team: str
    context: Cond = TRUE
    pre: Cond = TRUE
    achieved: Cond | None = None
    unachievable: Cond | None = None
    irrelevant: Cond | None = None
    body: list = field(default_factory=list)
    combinator: str | None = None
    constraints: list = field(default_factory=list)
    independent: frozenset = frozenset()
    parent: "PlanNode | None" = field(default=None, repr=False, compare=False)
    children: list = field(default_factory=list, repr=False, compare=False)
    line: int = 0

    @property
    def primitives(self):
        return [e for e in self.body if not e.is_plan]

    def predecessors(self, child: str) -> list:
        return [a for a, b in self.constraints if b == child]

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass
class Reallocation:
    trigger: Cond
    failed_prefix: str = "Failed"


@dataclass
class TopSpec:
    org: OrgNode
    root: PlanNode
    plans: dict
    criticality: dict
    reallocation: Reallocation | None = None

    def plan(self, name) -> PlanNode:
        try:
            return self.plans[name]
        except KeyError:
            raise TopError(f"unknown plan {name!r}") from None

    def leaf_teams(self) -> list:
        return self.org.leaves()

    def roles(self) -> list:
        return [n.role for n in self.org.leaves()]

    def conditioned_classes(self) -> dict:
        """agent class -> message tag, for classes whose membership waits on a message."""
        out = {}
        for leaf in self.org.leaves():
            if leaf.message:
                out[leaf.agent_class] = leaf.message
        return out


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_PLAN_KEYS = {"team", "context", "pre", "achieved", "unachievable", "irrelevant",
              "body", "combinator", "constraints", "independent"}
_LEAF = re.compile(r"^([A-Za-z_]\w*)(?:\|(\w+))?\s*:\s*(\S+)(.*)$")
_OPEN = re.compile(r"^([A-Za-z_]\w*)\s*\{$")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("#", 1)[0] for line in text.splitlines())


def _block_end(text: str, start: int, line_of) -> int:
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return i
    raise TopParseError(line_of(start), "unbalanced braces")


def _split_top(text: str, sep: str) -> list:
    """Split on ``sep`` outside brackets/parens, returning (offset, piece) pairs."""
    out, depth, last = [], 0, 0
    for i, ch in enumerate(text):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == sep and depth == 0:
            out.append((last, text[last:i]))
            last = i + 1
    out.append((last, text[last:]))
    return out


def parse_top(text: str) -> TopSpec:
    text = _strip_comments(text)
    line_starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def line_of(pos):
        lo = 0
        for i, s in enumerate(line_starts):
            if s <= pos:
                lo = i
        return lo + 1

    org = None
    criticality: dict = {}
    reallocation = None
    plans: dict = {}
    order: list = []
    header = re.compile(r"\s*(org|criticality|reallocate|plan\s+([A-Za-z_]\w*))\s*\{")
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = header.match(text, pos)
        if not m:
            snippet = text[pos:].split("\n", 1)[0]
            raise TopParseError(line_of(pos), f"unexpected text {snippet!r}")
        brace = m.end() - 1
        end = _block_end(text, brace, line_of)
        inner = text[brace + 1:end]
        base = brace + 1
        kind = m.group(1).split()[0]
        if kind == "org":
            if org is not None:
                raise TopParseError(line_of(pos), "duplicate org block")
            org = _parse_org(inner, base, line_of)
        elif kind == "criticality":
            for off, piece in _split_top(inner.replace("\n", ";"), ";"):
                if not piece.strip():
                    continue
                if "=" not in piece:
                    raise TopParseError(line_of(base + off), f"bad criticality entry {piece.strip()!r}")
                k, v = (x.strip() for x in piece.split("=", 1))
                if v not in ("0", "1"):
                    raise TopParseError(line_of(base + off), f"criticality of {k} must be 0 or 1")
                criticality[k] = int(v)
        elif kind == "reallocate":
            fields = _parse_fields(inner, base, line_of, {"trigger", "failed"})
            trig_line, trig = fields.get("trigger", (line_of(pos), ""))
            reallocation = Reallocation(_cond(trig, trig_line, FALSE),
                                        fields.get("failed", (0, "Failed"))[1].strip())
        else:
            name = m.group(2)
            if name in plans:
                raise TopParseError(line_of(pos), f"duplicate plan {name!r}")
            plans[name] = _parse_plan(name, inner, base, line_of, line_of(pos))
            order.append(name)
        pos = end + 1

    if org is None:
        raise TopParseError(1, "missing org block")
    if not order:
        raise TopParseError(1, "no plan blocks")
    _link_plans(plans, order, org)
    _link_org(org)
    return TopSpec(org, plans[order[0]], plans, criticality, reallocation)


def _cond(text, line, default):
    try:
        return parse_condition(text, default)
    except ConditionError as exc:
        raise TopParseError(line, f"malformed condition: {exc}") from None


def _parse_org(inner: str, base: int, line_of) -> OrgNode:
    stack: list = []
    roots: list = []
    offset = 0
    for raw in inner.split("\n"):
        line_no = line_of(base + offset)
        offset += len(raw) + 1
        line = raw.strip()
        if not line:
            continue
        if line == "}":
            if not stack:
                raise TopParseError(line_no, "unbalanced '}' in org block")
            stack.pop()
            continue
        m = _OPEN.match(line)
        if m:
            node = OrgNode(m.group(1))
        else:
            m = _LEAF.match(line)
            if not m:
                raise TopParseError(line_no, f"bad org entry {line!r}")
            node = OrgNode(m.group(1), role=m.group(3), message=m.group(2))
            opts = m.group(4).split()
            if len(opts) % 2:
                raise TopParseError(line_no, f"dangling option in {line!r}")
            for k, v in zip(opts[::2], opts[1::2]):
                if k == "join":
                    node.join = v
                elif k == "class":
                    node.agent_class = v
                else:
                    raise TopParseError(line_no, f"unknown org option {k!r}")
        (stack[-1].children if stack else roots).append(node)
        if _OPEN.match(line):
            stack.append(node)
    if stack:
        raise TopParseError(line_of(base), f"unclosed org node {stack[-1].name!r}")
    if len(roots) != 1:
        raise TopParseError(line_of(base), "org block must have exactly one root")
    names = [n.name for n in roots[0].walk()]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise TopParseError(line_of(base), f"duplicate org names {sorted(dup)}")
    for leaf in roots[0].leaves():
        if leaf.role is None:
            raise TopParseError(line_of(base), f"org leaf {leaf.name!r} has no role")
        leaf.agent_class = leaf.agent_class or "agent"
        leaf.join = leaf.join or f"join{leaf.name}"
    return roots[0]


def _link_org(node: OrgNode, parent=None):
    node.parent = parent
    for c in node.children:
        _link_org(c, node)


def _parse_fields(inner, base, line_of, allowed) -> dict:
    out = {}
    for off, piece in _split_top(inner, ";"):
        if not piece.strip():
            continue
        stripped = piece.lstrip()
        line = line_of(base + off + (len(piece) - len(stripped)))
        if ":" not in piece:
            raise TopParseError(line, f"expected 'key: value' in {piece.strip()!r}")
        key, val = piece.split(":", 1)
        key = key.strip()
        if key not in allowed:
            raise TopParseError(line, f"unknown field {key!r}")
        out[key] = (line, val.strip())
    return out


def _parse_plan(name, inner, base, line_of, header_line) -> PlanNode:
    f = _parse_fields(inner, base, line_of, _PLAN_KEYS)
    if "team" not in f:
        raise TopParseError(header_line, f"plan {name!r} has no team")
    plan = PlanNode(name, f["team"][1], line=header_line)
    for key in ("context", "pre"):
        if key in f:
            setattr(plan, key, _cond(f[key][1], f[key][0], TRUE))
    for key in ("achieved", "unachievable", "irrelevant"):
        if key in f and f[key][1]:
            setattr(plan, key, _cond(f[key][1], f[key][0], None))
    if "body" in f:
        line, val = f["body"]
        if not (val.startswith("[") and val.endswith("]")):
            raise TopParseError(line, "body must be a bracketed list")
        for _, entry in _split_top(val[1:-1], ","):
            entry = entry.strip()
            if not entry:
                continue
            if " if " in entry:
                act, cond = entry.split(" if ", 1)
                plan.body.append(BodyEntry(act.strip(), _cond(cond, line, TRUE), False, entry))
            else:
                plan.body.append(BodyEntry(entry, TRUE, False, entry))
    if "combinator" in f:
        comb = f["combinator"][1].upper()
        if comb not in ("AND", "OR"):
            raise TopParseError(f["combinator"][0], f"combinator must be AND or OR, got {comb!r}")
        plan.combinator = comb
    if "constraints" in f:
        line, val = f["constraints"]
        for _, piece in _split_top(val, ","):
            if not piece.strip():
                continue
            parts = [p.strip() for p in piece.split("->")]
            if len(parts) < 2 or not all(parts):
                raise TopParseError(line, f"bad constraint {piece.strip()!r}")
            plan.constraints.extend(zip(parts, parts[1:]))
    if "independent" in f:
        plan.independent = frozenset(p.strip() for p in f["independent"][1].split(",") if p.strip())
    return plan


def _link_plans(plans: dict, order: list, org: OrgNode):
    for name in order:
        plan = plans[name]
        if org.find(plan.team) is None:
            raise TopParseError(plan.line, f"plan {name!r} references unknown team {plan.team!r}")
        entries = []
        for e in plan.body:
            if e.name in plans and e.condition is TRUE:
                child = plans[e.name]
                if child.parent is not None:
                    raise TopParseError(plan.line, f"plan {e.name!r} has two parents")
                child.parent = plan
                plan.children.append(child)
                entries.append(e._replace(is_plan=True))
            else:
                entries.append(e)
        plan.body = entries
        kids = {c.name for c in plan.children}
        for a, b in plan.constraints:
            for x in (a, b):
                if x not in kids:
                    raise TopParseError(plan.line, f"constraint names {x!r}, not a sub-plan of {name!r}")
        for x in plan.independent:
            if x not in kids:
                raise TopParseError(plan.line, f"independent names {x!r}, not a sub-plan of {name!r}")
        if plan.combinator and len(plan.children) < 2:
            raise TopParseError(plan.line, f"{plan.combinator} needs at least two sub-plans in {name!r}")
        cyc = _find_cycle(plan.constraints)
        if cyc:
            raise TopParseError(plan.line, f"cyclic temporal constraint {' -> '.join(cyc)}")
    root = plans[order[0]]
    if root.parent is not None:
        raise TopParseError(root.line, "first plan must be the root")


def _find_cycle(edges) -> list:
    graph: dict = {}
    for a, b in edges:
        graph.setdefault(a, []).append(b)
    state: dict = {}

    def visit(n, path):
        state[n] = 1
        for m in graph.get(n, ()):
            if state.get(m) == 1:
                return path[path.index(m):] + [m] if m in path else [n, m]
            if m not in state:
                found = visit(m, path + [m])
                if found:
                    return found
        state[n] = 2
        return None

    for n in list(graph):
        if n not in state:
            found = visit(n, [n])
            if found:
                return found
    return []


def topological_layers(plan: PlanNode) -> list:
    """Group sub-plans into layers that respect the temporal constraints."""
    names = [c.name for c in plan.children]
    indeg = {n: 0 for n in names}
    for _, b in plan.constraints:
        indeg[b] += 1
    layers = []
    remaining = list(names)
    while remaining:
        layer = [n for n in remaining if indeg[n] == 0]
        layers.append(layer)
        remaining = [n for n in remaining if n not in layer]
        for a, b in plan.constraints:
            if a in layer:
                indeg[b] -= 1
    return layers


# ---------------------------------------------------------------------------
# Reallocation
# ---------------------------------------------------------------------------

def steam_reallocate(criticality: dict, failed_role: str, candidate_role: str) -> bool:
    missing = [r for r in (failed_role, candidate_role) if r not in criticality]
    if missing:
        raise TopError(f"no criticality entry for {', '.join(missing)}")
    return criticality[failed_role] - criticality[candidate_role] > 0


# ---------------------------------------------------------------------------
# Interpreter and incomplete policies
# ---------------------------------------------------------------------------

class DecisionPoint(NamedTuple):
    """An allocation choice left open: the agent class, and the message tag/value it waits on."""

    agent_class: str
    tag: str | None = None
    value: object = None


class IncompletePolicy:
    """Belief-indexed team policy derived from a TOP, with allocation choices left open.

    ``decide(agent, belief)`` returns a ``Decision`` for filled entries and a
    ``DecisionPoint`` where the allocation decides.
    """

    def __init__(self, top: TopSpec, agent_classes, constants=None, messages=None):
        self.top = top
        self.agent_classes = tuple(agent_classes)
        self.constants = dict(constants or {})
        # tag -> possible message values, for conditioned classes
        self.messages = dict(messages or {})
        self.diagnostics: dict = {}
        self._cache: dict = {}
        self._join = {leaf.role: leaf.join for leaf in top.org.leaves()}
        self._conditioned = top.conditioned_classes()
        self.entries = self._cache

    @property
    def open_points(self) -> list:
        points = []
        for cls in dict.fromkeys(self.agent_classes):
            tag = self._conditioned.get(cls)
            if tag is None:
                points.append(DecisionPoint(cls))
            else:
                for v in self.messages.get(tag, ()):
                    points.append(DecisionPoint(cls, tag, v))
        return points

    def join_action(self, agent, role):
        return take(agent, role, self._join.get(role, f"take:{role}"))

    def decide(self, agent: int, belief: BeliefState):
        key = (self.agent_classes[agent], belief)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._interpret(agent, belief)
            self._cache[key] = hit
        if isinstance(hit, Decision):
            a = hit.action
            if a.agent != agent:
                hit = Decision.of(a._replace(agent=agent))
        return hit

    # -- interpretation ------------------------------------------------
    def _interpret(self, agent, belief):
        if ABSENT_PROP in belief.props:
            return Decision.of(noop(agent))
        role = role_of(belief)
        cls = self.agent_classes[agent]
        if role is None:
            tag = self._conditioned.get(cls)
            if tag is None:
                return DecisionPoint(cls)
            value = belief.get(tag)
            if value is None:
                return Decision.of(noop(agent))
            return DecisionPoint(cls, tag, value)
        leaf = self.top.org.leaf_for_role(role)
        if leaf is None:
            self._note(belief, f"role {role!r} not in organization")
            return Decision.of(noop(agent))
        ctx = EvalContext(belief, self.constants, self._resolve)
        realloc = self.top.reallocation
        if realloc is not None and realloc.trigger.evaluate(ctx):
            failed = self._failed_role(belief, realloc.failed_prefix)
            if failed is not None and steam_reallocate(self.top.criticality, failed, role):
                return Decision.of(self.join_action(agent, failed))
        candidates = []
        self._collect(self.top.root, leaf, ctx, 0, candidates)
        candidates.sort(key=lambda c: -c[0])
        chosen = None
        for depth, order, plan in candidates:
            act = next((e for e in plan.primitives if e.condition.evaluate(ctx)), None)
            if act is None:
                continue
            if chosen is not None:
                if depth == chosen[0]:
                    self._note(belief, f"tie between {chosen[1].name} and {plan.name}")
                break
            chosen = (depth, plan, act)
        if chosen is None:
            self._note(belief, "no applicable plan")
            return Decision.of(noop(agent))
        name = chosen[2].name
        if name in (NOOP, "noop", "wait"):
            return Decision.of(noop(agent))
        return Decision.of(execute(agent, name))

    def _note(self, belief, msg):
        self.diagnostics.setdefault(msg, belief)

    def _failed_role(self, belief, prefix):
        for leaf in self.top.org.leaves():
            if f"{prefix}({leaf.role})" in belief.props:
                return leaf.role
        return None

    def _collect(self, plan: PlanNode, leaf: OrgNode, ctx, depth, out):
        team = self.top.org.find(plan.team)
        if not team.contains(leaf):
            return
        if not (plan.context.evaluate(ctx) and plan.pre.evaluate(ctx)):
            return
        if self._terminated(plan, ctx):
            return
        if plan.parent is not None:
            for pred in plan.parent.predecessors(plan.name):
                if not self._status("Achieved", self.top.plan(pred), ctx):
                    return
        if plan.primitives:
            out.append((depth, len(out), plan))
        for child in plan.children:
            self._collect(child, leaf, ctx, depth + 1, out)

    def _terminated(self, plan, ctx):
        return any(self._status(p, plan, ctx) for p in ("Achieved", "Unachievable", "Irrelevant"))

    def _resolve(self, predicate, name, ctx):
        return self._status(predicate, self.top.plan(name), ctx)

    def _status(self, predicate, plan: PlanNode, ctx) -> bool:
        own = {"Achieved": plan.achieved, "Unachievable": plan.unachievable,
               "Irrelevant": plan.irrelevant}[predicate]
        if own is not None:
            return own.evaluate(ctx)
        if predicate == "Irrelevant" or not plan.children:
            return False
        kids = [self._status(predicate, c, ctx) for c in plan.children]
        all_mode = (plan.combinator == "OR") == (predicate == "Unachievable")
        return all(kids) if all_mode else any(kids)


def derive_incomplete_policy(top: TopSpec, model, agent_classes=None, constants=None,
                             messages=None) -> IncompletePolicy:
    """Incomplete policy for ``model`` driven by ``top``; every plan primitive must be a model action."""
    known = set()
    for names in model.execution.values():
        known |= set(names)
    for plan in top.plans.values():
        for e in plan.primitives:
            if e.name not in known and e.name not in (NOOP, "noop", "wait"):
                raise TopError(f"plan {plan.name!r} uses action {e.name!r} unknown to the model")
    if agent_classes is None:
        classes = {leaf.agent_class for leaf in top.org.leaves()}
        if len(classes) != 1:
            raise TopError("agent classes must be given for heterogeneous organizations")
        agent_classes = [classes.pop()] * model.n_agents
    consts = {"T": model.horizon}
    consts.update(constants or {})
    return IncompletePolicy(top, agent_classes, consts, messages)


# ---------------------------------------------------------------------------
# Completion by an allocation
# ---------------------------------------------------------------------------

class Assignment(NamedTuple):
    """Per-agent roles chosen at each open decision point."""

    roles: dict  # DecisionPoint -> tuple of roles, one per agent of that class in index order


def assignment_from_counts(top: TopSpec, agent_classes, counts: dict, branches: dict | None = None):
    """Build an Assignment from leaf-team counts.

    ``counts`` maps unconditioned leaf team names to agent counts;
    ``branches`` maps a message value to counts for conditioned leaf teams.
    Agents of a class fill that class's leaf teams in organization order, by index.
    """
    conditioned = top.conditioned_classes()
    roles = {}
    by_class: dict = {}
    for leaf in top.org.leaves():
        by_class.setdefault(leaf.agent_class, []).append(leaf)
    members: dict = {}
    for cls in agent_classes:
        members[cls] = members.get(cls, 0) + 1
    for cls, leaves in by_class.items():
        n = members.get(cls, 0)
        tag = conditioned.get(cls)
        tables = [(DecisionPoint(cls), counts)] if tag is None else [
            (DecisionPoint(cls, tag, v), c) for v, c in (branches or {}).items()]
        for point, table in tables:
            seq = []
            for leaf in leaves:
                seq.extend([leaf.role] * table.get(leaf.name, 0))
            if len(seq) != n:
                raise CompletenessError(
                    f"allocation for {point} assigns {len(seq)} of {n} {cls} agents")
            roles[point] = tuple(seq)
    return Assignment(roles)


class OpenDecision(CompletenessError):
    """Raised by a probe policy that reached an unfilled decision point."""


def probe_policy(incomplete: IncompletePolicy) -> JointPolicy:
    """The incomplete policy itself; fails with OpenDecision wherever an allocation would be consulted.

    Values computed through it hold for every completion.
    """
    def make(agent):
        def decide(belief):
            d = incomplete.decide(agent, belief)
            if isinstance(d, DecisionPoint):
                raise OpenDecision(f"agent {agent} reached {d}")
            return d
        return LocalPolicy(agent, decide=decide)

    return JointPolicy(BELIEF, tuple(make(i) for i in range(len(incomplete.agent_classes))))


def complete_policy(incomplete: IncompletePolicy, allocation: Assignment, consulted: dict | None = None) -> JointPolicy:
    """Fill every decision point from ``allocation``.

    If ``consulted`` is a dict, each decision point actually reached is recorded
    in it with the roles used, so callers can tell which allocations would behave identically.
    """
    missing = [p for p in incomplete.open_points if p not in allocation.roles]
    if missing:
        raise CompletenessError(f"allocation has no branch for {missing[0]}")
    rank = []
    seen: dict = {}
    for cls in incomplete.agent_classes:
        rank.append(seen.get(cls, 0))
        seen[cls] = seen.get(cls, 0) + 1

    def make(agent):
        def decide(belief):
            d = incomplete.decide(agent, belief)
            if isinstance(d, DecisionPoint):
                roles = allocation.roles.get(d)
                if roles is None:
                    raise CompletenessError(f"agent {agent}: allocation has no branch for {d} at belief {belief}")
                if consulted is not None:
                    consulted[d] = roles
                return Decision.of(incomplete.join_action(agent, roles[rank[agent]]))
            return d
        return LocalPolicy(agent, decide=decide)

    return JointPolicy(BELIEF, tuple(make(i) for i in range(len(incomplete.agent_classes))))
