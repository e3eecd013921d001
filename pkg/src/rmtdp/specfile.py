"""Sectioned domain-spec files: either a builtin with overrides or a hand-authored explicit model.

Layout::

    [domain]
    name = toy
    horizon = 3
    agents = 2            # builtins: helicopters / ambulances; explicit: agent count
    builtin = mission-rehearsal

    [override]            # builtins only: parameter = value (tuples comma-separated)
    fail = 0.1, 0.2, 0.3

    [features]            # explicit models: name = value value ...
    [roles]               # role [join joinName]
    [actions]             # role : exec exec ...   |   role -> target target ...
    [transition]          # state | joint-action | successor | p
    [observation]         # successor | joint-action | obs obs ... | p
    [reward]              # state | joint-action | r
    [start]               # state | p
    [top]                 # a TOP document for explicit models

States are written ``v1 v2 ... @ role1 role2 ...``; joint actions as one action
name per agent (``*`` matches any).  An observation is ``-`` or comma-separated
tokens; the token rule adds ``p``, removes ``~p`` and replaces ``Role(r)``.
"""
from __future__ import annotations

import ast
import dataclasses
from pathlib import Path

from .allocation import build_allocation_space
from .factoring import ComponentFactor, CompositionPlan
from .model import UNASSIGNED, ExplicitModel, FactoredState, FeatureSpec, ModelError, validate_model
from .top import BeliefState, BeliefUpdateRule, TopError, derive_incomplete_policy, parse_top

SECTIONS = ("domain", "override", "features", "roles", "actions", "transition",
            "observation", "reward", "start", "top")


class SpecError(ValueError):
    """Malformed domain-spec file; ``line`` is 1-based when known."""

    def __init__(self, reason, line=None):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}" if line else reason)


def read_sections(text: str) -> dict:
    sections: dict = {}
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        body = raw if current == "top" else raw.split("#", 1)[0]
        stripped = body.strip()
        if stripped.startswith("[") and stripped.endswith("]") and " " not in stripped:
            name = stripped[1:-1].strip().lower()
            if name not in SECTIONS:
                raise SpecError(f"unknown section [{name}]", no)
            if name in sections:
                raise SpecError(f"duplicate section [{name}]", no)
            current = name
            sections[name] = []
            continue
        if not stripped:
            continue
        if current is None:
            raise SpecError("content before the first section", no)
        sections[current].append((no, body if current == "top" else stripped))
    return sections


def _keyvals(rows) -> dict:
    out = {}
    for no, line in rows:
        if "=" not in line:
            raise SpecError(f"expected key = value, got {line!r}", no)
        k, v = (x.strip() for x in line.split("=", 1))
        out[k] = (no, v)
    return out


def _literal(text: str):
    text = text.strip()
    try:
        val = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if "," in text:
            return tuple(_literal(p) for p in text.split(","))
        return text
    return tuple(val) if isinstance(val, list) else val


def _parse_state(text, n_features, n_agents, no):
    if "@" not in text:
        raise SpecError(f"state {text!r} lacks '@ roles'", no)
    vals, roles = text.split("@", 1)
    vals = tuple(_literal(v) for v in vals.split())
    roles = tuple(roles.split())
    if len(vals) != n_features:
        raise SpecError(f"state {text!r} has {len(vals)} values for {n_features} features", no)
    if len(roles) != n_agents:
        raise SpecError(f"state {text!r} has {len(roles)} roles for {n_agents} agents", no)
    return FactoredState(vals, roles)


def _cells(line, n, no):
    cells = [c.strip() for c in line.split("|")]
    if len(cells) != n:
        raise SpecError(f"expected {n} '|'-separated fields, got {len(cells)}", no)
    return cells


def _prob(text, no):
    try:
        return float(text)
    except ValueError:
        raise SpecError(f"bad number {text!r}", no) from None


def _obs(token: str):
    return None if token == "-" else token


class TokenBeliefRule(BeliefUpdateRule):
    """Generic rule for explicit models: observations are comma-separated proposition updates."""

    def __init__(self, model=None):
        self.model = model

    def initial(self, agent):
        return BeliefState.make((), self=agent)

    def update(self, belief, obs):
        if obs is None:
            return belief
        props = set(belief.props)
        if isinstance(obs, FactoredState):
            me = belief.get("self")
            props = {f"Role({obs.roles[me]})"} | {
                f"{f.name}={v}" for f, v in zip(self.model.features, obs.values)}
            return BeliefState(frozenset(props), belief.scalars)
        for tok in str(obs).split(","):
            tok = tok.strip()
            if not tok or tok == "-":
                continue
            if tok.startswith("Role("):
                props = {p for p in props if not p.startswith("Role(")}
                props.add(tok)
            elif tok.startswith("~"):
                props.discard(tok[1:])
            else:
                props.add(tok)
        return BeliefState(frozenset(props), belief.scalars)


def _with_overrides(params, overrides: dict):
    fields = {f.name: f for f in dataclasses.fields(params)}
    changes = {}
    for key, (no, text) in overrides.items():
        if key not in fields:
            raise SpecError(f"unknown parameter {key!r} for {type(params).__name__}", no)
        val = _literal(text)
        if isinstance(getattr(params, key), tuple) and not isinstance(val, tuple):
            val = (val,)
        changes[key] = val
    return dataclasses.replace(params, **changes)


def build_explicit(sections: dict, name: str, horizon: int, agents: int):
    from .domains.base import DomainInstance

    features = []
    for no, line in sections.get("features", []):
        if "=" not in line:
            raise SpecError("feature lines are 'name = values'", no)
        k, v = line.split("=", 1)
        vals = tuple(_literal(x) for x in v.split())
        if not vals:
            raise SpecError(f"feature {k.strip()!r} has no values", no)
        features.append(FeatureSpec(k.strip(), vals))
    roles, joins = [], {}
    for no, line in sections.get("roles", []):
        parts = line.split()
        roles.append(parts[0])
        if len(parts) == 3 and parts[1] == "join":
            joins[parts[0]] = parts[2]
        elif len(parts) != 1:
            raise SpecError("role lines are 'role [join joinName]'", no)
    execution, taking = {}, {}
    for no, line in sections.get("actions", []):
        if "->" in line:
            src, dst = line.split("->", 1)
            taking[src.strip()] = tuple(dst.split())
        elif ":" in line:
            role, names = line.split(":", 1)
            execution[role.strip()] = set(names.split())
        else:
            raise SpecError("action lines are 'role : actions' or 'role -> targets'", no)
    nf = len(features)
    trans: dict = {}
    for no, line in sections.get("transition", []):
        s, a, s2, p = _cells(line, 4, no)
        key = (_parse_state(s, nf, agents, no), tuple(a.split()))
        if len(key[1]) != agents:
            raise SpecError(f"joint action {a!r} needs {agents} names", no)
        trans.setdefault(key, []).append((_parse_state(s2, nf, agents, no), _prob(p, no)))
    obs: dict = {}
    for no, line in sections.get("observation", []):
        s2, a, o, p = _cells(line, 4, no)
        toks = tuple(_obs(x) for x in o.split())
        if len(toks) != agents:
            raise SpecError(f"observation {o!r} needs {agents} entries", no)
        key = (_parse_state(s2, nf, agents, no), tuple(a.split()))
        obs.setdefault(key, []).append((toks, _prob(p, no)))
    rewards = {}
    for no, line in sections.get("reward", []):
        s, a, r = _cells(line, 3, no)
        rewards[(_parse_state(s, nf, agents, no), tuple(a.split()))] = _prob(r, no)
    start = []
    for no, line in sections.get("start", []):
        s, p = _cells(line, 2, no)
        start.append((_parse_state(s, nf, agents, no), _prob(p, no)))
    if not start:
        raise SpecError("explicit model needs a [start] section")
    try:
        model = ExplicitModel(features, agents, roles, execution, taking or {UNASSIGNED: tuple(roles)},
                              horizon, start, joins, transitions=trans, observations=obs, rewards=rewards)
    except ModelError as exc:
        raise SpecError(str(exc)) from None
    problems = validate_model(model)
    if problems:
        unique = list(dict.fromkeys(str(v) for v in problems.violations))
        shown = "; ".join(unique[:3])
        more = f" (+{len(unique) - 3} more)" if len(unique) > 3 else ""
        raise SpecError(f"model fails validation: {shown}{more}")
    if "top" not in sections:
        raise SpecError("explicit model needs a [top] section for its team plan")
    top_text = "\n".join(line for _, line in sections["top"])
    try:
        top = parse_top(top_text)
        incomplete = derive_incomplete_policy(top, model)
    except TopError as exc:
        raise SpecError(f"in [top]: {exc}") from None
    rule = TokenBeliefRule(model)
    factor = ComponentFactor(top.root.name, model, tuple(f.name for f in features), tuple(range(agents)),
                             layout=tuple(f.name for f in features))
    plan = CompositionPlan("leaf", factor=factor, name=top.root.name)
    space = build_allocation_space(top.org, agents)
    classes = tuple(incomplete.agent_classes)
    return DomainInstance(name, {"horizon": horizon, "agents": agents}, top, model, plan, rule,
                          incomplete, space, agent_classes=classes)


def load_spec(source, agents=None, horizon=None):
    """Build a DomainInstance from spec text or a path; CLI ``agents``/``horizon`` win over the file."""
    from .domains import BUILDERS, PARAMS

    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    sections = read_sections(text)
    if "domain" not in sections:
        raise SpecError("missing [domain] section")
    dom = _keyvals(sections["domain"])
    name = dom.get("name", (None, "domain"))[1]

    def intval(key):
        if key not in dom:
            return None
        no, v = dom[key]
        try:
            return int(v)
        except ValueError:
            raise SpecError(f"{key} must be an integer", no) from None

    agents = agents if agents is not None else intval("agents")
    horizon = horizon if horizon is not None else intval("horizon")
    builtin = dom.get("builtin", (None, None))[1]
    if builtin is not None:
        if builtin not in BUILDERS:
            raise SpecError(f"unknown builtin {builtin!r}", dom["builtin"][0])
        params = _with_overrides(PARAMS[builtin](), _keyvals(sections.get("override", [])))
        return build_builtin(builtin, params, agents, horizon)
    if agents is None or horizon is None:
        raise SpecError("explicit models need agents and horizon in [domain]")
    return build_explicit(sections, name, horizon, agents)


def build_builtin(builtin: str, params=None, agents=None, horizon=None):
    """Builtin domain with optional agent/horizon overrides (helicopters or ambulances)."""
    from .domains import BUILDERS, PARAMS

    params = params or PARAMS[builtin]()
    changes = {}
    if horizon is not None:
        changes["horizon"] = horizon
    if agents is not None:
        changes["n_helos" if builtin == "mission-rehearsal" else "ambulances"] = agents
    params = dataclasses.replace(params, **changes)
    try:
        return BUILDERS[builtin](params)
    except ModelError as exc:
        raise SpecError(str(exc)) from None
