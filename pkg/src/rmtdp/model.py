"""Core RMTDP types: factored states, typed actions, kernels and joint policies."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, NamedTuple, Sequence

PROB_TOL = 1e-9

UNASSIGNED = "unassigned"
ABSENT = "-"

TAKE = "role-taking"
EXECUTE = "role-execution"
NOOP = "no-op"


class ModelError(ValueError):
    """Raised for invalid model construction or queries (unknown agents, bad values)."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ModelError(f"feature {self.name!r} has an empty value set")
        object.__setattr__(self, "values", tuple(self.values))


class FactoredState(NamedTuple):
    """Feature values in declaration order plus the per-agent role vector."""

    values: tuple
    roles: tuple

    def encode(self) -> str:
        vals = " ".join(str(v) for v in self.values)
        return f"{vals} @ {' '.join(self.roles)}"


class ActionLabel(NamedTuple):
    agent: int
    kind: str
    target_role: str | None = None
    name: str = NOOP


def noop(agent: int) -> ActionLabel:
    return ActionLabel(agent, NOOP, None, NOOP)


def take(agent: int, role: str, name: str | None = None) -> ActionLabel:
    return ActionLabel(agent, TAKE, role, name or f"take:{role}")


def execute(agent: int, name: str) -> ActionLabel:
    return ActionLabel(agent, EXECUTE, None, name)


JointAction = tuple  # tuple[ActionLabel, ...], one per agent


def action_names(joint: JointAction) -> tuple:
    return tuple(a.name for a in joint)


class RmtdpModel:
    """Base class for the tuple <S, A, P, Omega, O, R, RL> with a finite horizon.

    Subclasses provide ``transition``, ``reward`` and either ``observation``
    (joint) or ``agent_observation`` (per-agent factored form, multiplied
    out by the default ``observation``).
    """

    def __init__(self, features: Sequence[FeatureSpec], n_agents: int, roles: Iterable[str],
                 execution: dict, taking: dict, horizon: int, start,
                 join_names: dict | None = None):
        names = [f.name for f in features]
        if len(set(names)) != len(names):
            raise ModelError("feature names must be unique")
        if horizon < 0:
            raise ModelError("horizon must be non-negative")
        self.features = tuple(features)
        self.feature_index = {f.name: i for i, f in enumerate(self.features)}
        self.n_agents = n_agents
        self.roles = tuple(roles)
        # role -> role-execution action names (Phi_{i,r})
        self.execution = {r: frozenset(v) for r, v in execution.items()}
        # current role -> target roles reachable by role-taking (Upsilon)
        self.taking = {r: tuple(v) for r, v in taking.items()}
        self.join_names = dict(join_names or {})
        self.horizon = horizon
        if isinstance(start, FactoredState):
            start = [(start, 1.0)]
        self.start = tuple(start)
        self._obs_cache: dict = {}

    # -- state helpers -------------------------------------------------
    def value(self, state: FactoredState, name: str):
        return state.values[self.feature_index[name]]

    def make_state(self, assignment: dict, roles: Sequence[str]) -> FactoredState:
        try:
            vals = tuple(assignment[f.name] for f in self.features)
        except KeyError as exc:
            raise ModelError(f"missing feature {exc.args[0]!r}") from None
        return FactoredState(vals, tuple(roles))

    def check_agent(self, agent: int):
        if not 0 <= agent < self.n_agents:
            raise ModelError(f"unknown agent index {agent}")

    # -- kernels ---------------------------------------------------------
    def transition(self, state: FactoredState, joint: JointAction) -> list:
        raise NotImplementedError

    def reward(self, state: FactoredState, joint: JointAction) -> float:
        raise NotImplementedError

    def agent_observation(self, state: FactoredState, joint: JointAction, agent: int) -> list:
        raise NotImplementedError

    def observation(self, state: FactoredState, joint: JointAction) -> list:
        key = (state, joint)
        cached = self._obs_cache.get(key)
        if cached is not None:
            return cached
        per_agent = [self.agent_observation(state, joint, i) for i in range(self.n_agents)]
        out = expand_factored(per_agent)
        self._obs_cache[key] = out
        return out

    def join_name(self, role: str) -> str:
        return self.join_names.get(role, f"take:{role}")


def expand_factored(per_agent: Sequence[Sequence[tuple]]) -> list:
    """Multiply independent per-agent observation distributions into a joint one."""
    out = []
    for combo in itertools.product(*per_agent):
        p = 1.0
        for _, q in combo:
            p *= q
        if p > 0.0:
            out.append((tuple(o for o, _ in combo), p))
    return out


def legal_actions(model: RmtdpModel, state: FactoredState, agent: int) -> set:
    model.check_agent(agent)
    role = state.roles[agent]
    acts = {noop(agent)}
    for name in model.execution.get(role, ()):
        acts.add(execute(agent, name))
    for target in model.taking.get(role, ()):
        acts.add(take(agent, target, model.join_name(target)))
    return acts


# ---------------------------------------------------------------------------
# Explicit table-backed model
# ---------------------------------------------------------------------------

WILDCARD = "*"


class ExplicitModel(RmtdpModel):
    """Model whose kernels are sparse tables keyed by state and joint action names.

    ``transitions`` maps ``(state, names)`` to ``[(successor, p), ...]``;
    ``observations`` maps ``(successor, names)`` to ``[(joint_obs, p), ...]``;
    ``rewards`` maps ``(state, names)`` to a float.  Any name may be ``"*"``
    to match every action of that agent.  Missing observation entries yield
    a deterministic ``None`` observation for every agent; missing rewards are 0.
    """

    def __init__(self, *args, transitions: dict, observations: dict | None = None,
                 rewards: dict | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.transitions = dict(transitions)
        self.observations = dict(observations or {})
        self.rewards = dict(rewards or {})

    def _lookup(self, table: dict, state, names: tuple):
        hit = table.get((state, names))
        if hit is not None:
            return hit
        for (s, key), val in table.items():
            if s == state and len(key) == len(names) and all(
                    k == WILDCARD or k == n for k, n in zip(key, names)):
                return val
        return None

    def transition(self, state, joint):
        row = self._lookup(self.transitions, state, action_names(joint))
        if row is None:
            raise ModelError(f"no transition row for {state.encode()} | {' '.join(action_names(joint))}")
        return row

    def observation(self, state, joint):
        row = self._lookup(self.observations, state, action_names(joint))
        if row is None:
            return [((None,) * self.n_agents, 1.0)]
        return row

    def reward(self, state, joint):
        r = self._lookup(self.rewards, state, action_names(joint))
        return 0.0 if r is None else r


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    kind: str
    key: str
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.key}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    states_checked: int = 0
    pairs_checked: int = 0
    truncated: bool = False  # a budget stopped the reachable search early

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def _check_state(model: RmtdpModel, state: FactoredState, report: ValidationReport):
    if len(state.values) != len(model.features):
        report.violations.append(Violation("type", state.encode(), "wrong number of feature values"))
        return
    for spec, v in zip(model.features, state.values):
        if v not in spec.values:
            report.violations.append(Violation("type", state.encode(), f"{spec.name}={v!r} out of range"))
    if len(state.roles) != model.n_agents:
        report.violations.append(Violation("type", state.encode(), "roles length differs from agent count"))


def _check_dist(kind: str, key: str, dist, report: ValidationReport):
    total = 0.0
    seen = set()
    for outcome, p in dist:
        if not (0.0 <= p <= 1.0) or math.isnan(p):
            report.violations.append(Violation(kind, key, f"probability {p} outside [0,1]"))
        if outcome in seen:
            report.violations.append(Violation(kind, key, "duplicate outcome"))
        seen.add(outcome)
        total += p
    if abs(total - 1.0) > PROB_TOL:
        report.violations.append(Violation(kind, key, f"probabilities sum to {total:.12g}"))


def validate_model(model: RmtdpModel, max_states: int = 200_000,
                   max_pairs: int = 1_000_000) -> ValidationReport:
    """Check kernel normalization, typing and action legality over reachable pairs.

    The search stops expanding once either budget is exceeded and marks the report truncated.
    """
    report = ValidationReport()
    if isinstance(model, ExplicitModel):
        _check_explicit_legality(model, report)
    frontier = []
    seen = set()
    _check_dist("start", "start", model.start, report)
    for s, p in model.start:
        if p > 0 and (0, s) not in seen:
            seen.add((0, s))
            frontier.append((0, s))
    while frontier:
        t, s = frontier.pop()
        _check_state(model, s, report)
        report.states_checked += 1
        if t >= model.horizon:
            continue
        if report.states_checked > max_states or report.pairs_checked > max_pairs:
            report.truncated = True
            continue
        options = [sorted(legal_actions(model, s, i)) for i in range(model.n_agents)]
        for joint in itertools.product(*options):
            report.pairs_checked += 1
            key = f"{s.encode()} | {' '.join(action_names(joint))}"
            try:
                succ = model.transition(s, joint)
            except ModelError as exc:
                report.violations.append(Violation("missing", key, str(exc)))
                continue
            _check_dist("transition", key, succ, report)
            try:
                r = model.reward(s, joint)
                if not math.isfinite(r):
                    report.violations.append(Violation("reward", key, f"non-finite reward {r}"))
            except ModelError as exc:
                report.violations.append(Violation("missing", key, str(exc)))
            for s2, p in succ:
                if p <= 0:
                    continue
                _check_dist("observation", f"{s2.encode()} | {' '.join(action_names(joint))}",
                            model.observation(s2, joint), report)
                if (t + 1, s2) not in seen:
                    seen.add((t + 1, s2))
                    frontier.append((t + 1, s2))
    return report


def _check_explicit_legality(model: ExplicitModel, report: ValidationReport):
    for (state, names), _ in model.transitions.items():
        for i, name in enumerate(names):
            if name in (WILDCARD, NOOP) or name.startswith("take:"):
                continue
            if name in model.join_names.values():
                continue
            role = state.roles[i] if i < len(state.roles) else None
            if name not in model.execution.get(role, ()):
                report.violations.append(Violation(
                    "legality", f"{state.encode()} | {' '.join(names)}",
                    f"agent {i} action {name!r} not permitted for role {role!r}"))


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class Decision(NamedTuple):
    """One policy entry: exactly one of the role-taking / role-execution parts is set."""

    taking: ActionLabel | None
    execution: ActionLabel | None

    @property
    def action(self) -> ActionLabel:
        return self.taking if self.taking is not None else self.execution

    @classmethod
    def of(cls, action: ActionLabel) -> "Decision":
        if action.kind == TAKE:
            return cls(action, None)
        return cls(None, action)

    def is_valid(self) -> bool:
        return (self.taking is None) != (self.execution is None)


class History:
    """Interned observation history; children are shared so identity means equality."""

    __slots__ = ("parent", "obs", "length", "_children", "_tuple", "__weakref__")

    def __init__(self, parent: "History | None" = None, obs: Hashable = None):
        self.parent = parent
        self.obs = obs
        self.length = 0 if parent is None else parent.length + 1
        self._children: dict = {}
        self._tuple = None

    def extend(self, obs) -> "History":
        child = self._children.get(obs)
        if child is None:
            child = History(self, obs)
            self._children[obs] = child
        return child

    def as_tuple(self) -> tuple:
        if self._tuple is None:
            self._tuple = () if self.parent is None else self.parent.as_tuple() + (self.obs,)
        return self._tuple

    def __repr__(self):
        return f"History{self.as_tuple()!r}"


class PolicyError(LookupError):
    """Raised when a policy has no entry for a reachable index."""


class LocalPolicy:
    """Per-agent decision map, either an explicit table or a lazily filled rule."""

    def __init__(self, agent: int, table: dict | None = None,
                 decide: Callable[[Hashable], Decision] | None = None):
        self.agent = agent
        self.entries: dict = {}
        for k, v in (table or {}).items():
            self.entries[k] = v if isinstance(v, Decision) else Decision.of(v)
        self._decide = decide

    def decision(self, index) -> Decision:
        d = self.entries.get(index)
        if d is None:
            if isinstance(index, History):
                d = self.entries.get(index.as_tuple())
            if d is None:
                if self._decide is None:
                    raise PolicyError(f"agent {self.agent}: no action for index {index!r}")
                d = self._decide(index)
            self.entries[index] = d
        return d

    def action(self, index) -> ActionLabel:
        return self.decision(index).action


class BeliefUnrolledPolicy(LocalPolicy):
    """History-indexed view of a belief-indexed local policy: folds histories through the rule."""

    def __init__(self, base: LocalPolicy, rule):
        super().__init__(base.agent)
        self.base = base
        self.rule = rule
        self._beliefs: dict = {}

    def belief_of(self, hist: History):
        b = self._beliefs.get(hist)
        if b is None:
            if hist.parent is None:
                b = self.rule.initial(self.agent)
            else:
                b = self.rule.update(self.belief_of(hist.parent), hist.obs)
            self._beliefs[hist] = b
        return b

    def decision(self, index) -> Decision:
        return self.base.decision(self.belief_of(index))


HISTORY = "observation-history"
BELIEF = "belief-state"


@dataclass
class JointPolicy:
    index_kind: str
    locals: tuple

    def actions(self, indices: Sequence) -> JointAction:
        return tuple(p.action(ix) for p, ix in zip(self.locals, indices))

    def unrolled(self, rule) -> "JointPolicy":
        """History-indexed unrolling of a belief-indexed policy."""
        if self.index_kind != BELIEF:
            raise PolicyError("only belief-indexed policies can be unrolled")
        return JointPolicy(HISTORY, tuple(BeliefUnrolledPolicy(p, rule) for p in self.locals))

    def check_exclusive(self) -> list:
        """Stored entries that break the one-of(role-taking, role-execution) rule."""
        bad = []
        for p in self.locals:
            for k, d in p.entries.items():
                if not d.is_valid():
                    bad.append((p.agent, k))
        return bad
