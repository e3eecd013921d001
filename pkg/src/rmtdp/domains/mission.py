"""Helicopter mission rehearsal: scouts clear a route, transports follow once one is cleared."""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from importlib import resources

from ..allocation import build_allocation_space
from ..factoring import ComponentFactor, build_rmtdp
from ..model import (ABSENT, EXECUTE, TAKE, UNASSIGNED, FactoredState, FeatureSpec,
                     ModelError, RmtdpModel, expand_factored)
from ..top import ABSENT_BELIEF, BeliefState, BeliefUpdateRule, derive_incomplete_policy, parse_top
from .base import DomainInstance

SCOUTS = ("memberSctTeamA", "memberSctTeamB", "memberSctTeamC")
TRANSPORT = "memberTransportTeam"
ROUTE_OF = {r: i + 1 for i, r in enumerate(SCOUTS)}
JOINS = {"memberSctTeamA": "joinSctTeamA", "memberSctTeamB": "joinSctTeamB",
         "memberSctTeamC": "joinSctTeamC", TRANSPORT: "joinTransportTeam"}

ALIVE, CRASHED, DEAD, ARRIVED, DONE = "alive", "crashed", "dead", "arrived", "done"
STATUSES = (ALIVE, CRASHED, DEAD, ARRIVED, DONE)
UP = (ALIVE, ARRIVED, DONE)

CHOOSE, MOVE = "chooseRoute", "moveForward"
CRITICAL = "CriticalFailure(DoScouting)"

TOKEN = re.compile(r"sct(\d+)OnRoute(\d)(Failed|Arrived|Alive)$")


@dataclass(frozen=True)
class MissionParams:
    n_helos: int = 6
    horizon: int = 10
    route_lengths: tuple = (4, 3, 2)
    fail: tuple = (0.1, 0.15, 0.2)
    observe_alive: tuple = (0.95, 0.94, 0.93)
    observe_fail: tuple = (0.98, 0.97, 0.96)
    r_replace: float = -10.0
    r_fail: float = -50.0
    r_scout: float = 5.0
    r_transport: float = 75.0
    transport_unscouted_crash: float = 1.0

    def validate(self):
        if self.n_helos < 0:
            raise ModelError("n_helos must be non-negative")
        for name in ("route_lengths", "fail", "observe_alive", "observe_fail"):
            if len(getattr(self, name)) != 3:
                raise ModelError(f"{name} needs one entry per route")
        if any(L < 1 for L in self.route_lengths):
            raise ModelError("route lengths must be at least 1")
        if self.horizon < 0:
            raise ModelError("horizon must be non-negative")
        for name in ("fail", "observe_alive", "observe_fail"):
            for p in getattr(self, name):
                if not 0.0 <= p <= 1.0:
                    raise ModelError(f"{name} entries must lie in [0, 1]")
        if not 0.0 <= self.transport_unscouted_crash <= 1.0:
            raise ModelError("transport_unscouted_crash must lie in [0, 1]")
        return self

    def without_failures(self) -> "MissionParams":
        return replace(self, fail=(0.0, 0.0, 0.0), transport_unscouted_crash=0.0)


def scout_token(agent: int, route: int, what: str) -> str:
    return f"sct{agent + 1}OnRoute{route}{what}"


class MissionModel(RmtdpModel):
    """State values: (time, cleared, scouted_1..3, loc_1..n, route_1..n, status_1..n); roles per agent.

    ``cleared`` is the route of the first scout to arrive (0 while none has) and
    ``scouted_r`` the furthest cell of route r a surviving scout has reached.
    Positions run 0 (START) .. L (END); cells 1..L-1 are dangerous until scouted.
    A crashed helicopter is dead from the next step on, with location and route
    reset since nothing depends on them any more.  Agents whose role is
    ``ABSENT`` are inert: used for component projections.
    """

    failure_monotone = True
    OFF = 5

    def __init__(self, params: MissionParams):
        params.validate()
        self.params = params
        n = params.n_helos
        T = params.horizon
        maxL = max(params.route_lengths)
        features = [FeatureSpec("time", tuple(range(T + 1))), FeatureSpec("cleared", (0, 1, 2, 3))]
        features += [FeatureSpec(f"scouted_{r}", tuple(range(maxL + 1))) for r in (1, 2, 3)]
        features += [FeatureSpec(f"loc_{i + 1}", tuple(range(maxL + 1))) for i in range(n)]
        features += [FeatureSpec(f"route_{i + 1}", (0, 1, 2, 3)) for i in range(n)]
        features += [FeatureSpec(f"status_{i + 1}", STATUSES) for i in range(n)]
        roles = list(SCOUTS) + [TRANSPORT]
        execution = {r: {MOVE} for r in SCOUTS}
        execution[TRANSPORT] = {CHOOSE, MOVE}
        taking = {UNASSIGNED: tuple(roles), TRANSPORT: SCOUTS}
        start = FactoredState((0, 0, 0, 0, 0) + (0,) * n + (0,) * n + (ALIVE,) * n, (UNASSIGNED,) * n)
        super().__init__(features, n, roles, execution, taking, T, start, JOINS)
        self.L = (0,) + tuple(params.route_lengths)
        self._step_cache: dict = {}

    # -- structure helpers ---------------------------------------------------
    def parts(self, s):
        n = self.n_agents
        v = s.values
        o = self.OFF
        return v[0], v[1], v[2:5], v[o:o + n], v[o + n:o + 2 * n], v[o + 2 * n:o + 3 * n]

    def pack(self, t, cleared, scouted, loc, route, status, roles):
        return FactoredState((t, cleared) + tuple(scouted) + tuple(loc) + tuple(route) + tuple(status),
                             tuple(roles))

    def scouting_active(self, s) -> bool:
        status = s.values[self.OFF + 2 * self.n_agents:]
        return not any(r in ROUTE_OF and st in (ARRIVED, DONE) for r, st in zip(s.roles, status))

    # -- kernels -------------------------------------------------------------
    def _step(self, s, joint):
        key = (s, joint)
        hit = self._step_cache.get(key)
        if hit is not None:
            return hit
        P = self.params
        t, cleared, scouted, loc, route, status = self.parts(s)
        old_status = status
        loc, route, status, roles = list(loc), list(route), list(status), list(s.roles)
        scouted = [0] + list(scouted)
        active = self.scouting_active(s)
        base_reward = 0.0
        for i, st in enumerate(status):
            if st == CRASHED:
                status[i], loc[i], route[i] = DEAD, 0, 0
            elif st == ARRIVED:
                status[i] = DONE
        movers = []
        for i, a in enumerate(joint):
            role = roles[i]
            if role == ABSENT:
                continue
            if a.kind == TAKE:
                target = a.target_role
                if role == UNASSIGNED:
                    roles[i] = target
                    if target in ROUTE_OF:
                        route[i] = ROUTE_OF[target]
                elif (role == TRANSPORT and target in ROUTE_OF and active and status[i] == ALIVE
                      and loc[i] == 0 and route[i] == 0):
                    roles[i] = target
                    route[i] = ROUTE_OF[target]
                    base_reward += P.r_replace
            elif a.kind == EXECUTE:
                if a.name == CHOOSE:
                    if role == TRANSPORT and status[i] == ALIVE and loc[i] == 0 and route[i] == 0 and cleared:
                        route[i] = cleared
                elif a.name == MOVE:
                    if status[i] == ALIVE and route[i] and loc[i] < self.L[route[i]]:
                        movers.append(i)
        risky = []
        for i in movers:
            rt = route[i]
            cell = loc[i] + 1
            if cell < self.L[rt] and cell > scouted[rt]:
                p = P.fail[rt - 1] if roles[i] in ROUTE_OF else P.transport_unscouted_crash
                if p > 0.0:
                    risky.append((i, p))
            loc[i] = cell
            if cell == self.L[rt]:
                status[i] = ARRIVED
        t2 = min(t + 1, self.horizon)
        succ = []
        expected = base_reward
        options = [((i, True, p), (i, False, 1.0 - p)) for i, p in risky]
        for combo in itertools.product(*options):
            prob = 1.0
            st2 = list(status)
            for i, crashed, q in combo:
                prob *= q
                if crashed:
                    st2[i] = CRASHED
            if prob == 0.0:
                continue
            event = 0.0
            new_clear = cleared
            sc2 = list(scouted)
            arrived_routes = []
            for i in movers:
                new = st2[i]
                rt = route[i]
                if new == CRASHED:
                    event += P.r_fail
                    continue
                if roles[i] in ROUTE_OF:
                    sc2[rt] = max(sc2[rt], loc[i])
                if new == ARRIVED:
                    if roles[i] in ROUTE_OF:
                        event += P.r_scout
                        arrived_routes.append(rt)
                    else:
                        event += P.r_transport
            if not new_clear and arrived_routes:
                new_clear = min(arrived_routes)
            succ.append((self.pack(t2, new_clear, sc2[1:], loc, route, st2, roles), prob))
            expected += prob * event
        out = (succ, expected)
        self._step_cache[key] = out
        return out

    def transition(self, state, joint):
        return self._step(state, joint)[0]

    def reward(self, state, joint):
        return self._step(state, joint)[1]

    def self_view(self, s, i):
        n = self.n_agents
        v = s.values
        o = self.OFF
        st = v[o + 2 * n + i]
        return (s.roles[i], v[o + i] == 0 and st != DEAD, st in (ARRIVED, DONE), v[o + n + i] > 0, st in UP)

    def fresh_events(self, s) -> list:
        """(token, detection probability) for scouts that crashed or arrived on the last step."""
        P = self.params
        _, _, _, _, route, status = self.parts(s)
        out = []
        for j, (r, rt, st) in enumerate(zip(s.roles, route, status)):
            if r not in ROUTE_OF:
                continue
            if st == CRASHED:
                out.append((scout_token(j, rt, "Failed"), P.observe_fail[rt - 1]))
            elif st == ARRIVED:
                out.append((scout_token(j, rt, "Arrived"), P.observe_alive[rt - 1]))
        return out

    def _watching(self, s, i, status, loc, route):
        return (s.roles[i] == TRANSPORT and status[i] == ALIVE and loc[i] == 0 and route[i] == 0
                and not any(r in ROUTE_OF and st == DONE for r, st in zip(s.roles, status)))

    @staticmethod
    def _event_subsets(events) -> list:
        out = {}
        for bits in itertools.product((True, False), repeat=len(events)):
            p = 1.0
            seen = []
            for (tok, q), b in zip(events, bits):
                p *= q if b else 1.0 - q
                if b:
                    seen.append(tok)
            if p > 0.0:
                key = frozenset(seen)
                out[key] = out.get(key, 0.0) + p
        return list(out.items())

    def agent_observation(self, s, joint, i):
        if s.roles[i] == ABSENT:
            return [(None, 1.0)]
        t, _, _, loc, route, status = self.parts(s)
        view = self.self_view(s, i)
        roster = s.roles if t == 1 else None
        if not self._watching(s, i, status, loc, route):
            return [((view, roster, frozenset()), 1.0)]
        return [((view, roster, seen), p) for seen, p in self._event_subsets(self.fresh_events(s))]

    def observation(self, state, joint):
        # observations depend on the successor state only
        hit = self._obs_cache.get(state)
        if hit is None:
            t, _, _, loc, route, status = self.parts(state)
            roster = state.roles if t == 1 else None
            subsets = None
            per_agent = []
            for i in range(self.n_agents):
                if state.roles[i] == ABSENT:
                    per_agent.append([(None, 1.0)])
                    continue
                view = self.self_view(state, i)
                if self._watching(state, i, status, loc, route):
                    if subsets is None:
                        subsets = self._event_subsets(self.fresh_events(state))
                    per_agent.append([((view, roster, seen), p) for seen, p in subsets])
                else:
                    per_agent.append([((view, roster, frozenset()), 1.0)])
            hit = expand_factored(per_agent)
            self._obs_cache[state] = hit
        return hit

    def without_failures(self) -> "MissionModel":
        return MissionModel(self.params.without_failures())


# ---------------------------------------------------------------------------
# Belief update
# ---------------------------------------------------------------------------

class MissionBeliefRule(BeliefUpdateRule):
    """Folds observations into the propositions the mission TOP tests.

    Accepts the model's observation triples (self view, roster, seen tokens),
    bare token collections, and full successor states (full observability).
    """

    def __init__(self, model: MissionModel):
        self.model = model

    def initial(self, agent):
        return BeliefState.make({"alive", "atStart"}, time=0, self=agent, rank=0,
                                scouts=0, failed=0, replaced=0)

    def update(self, belief, obs):
        if obs is None or belief is ABSENT_BELIEF:
            return belief
        if isinstance(obs, FactoredState):
            me = belief.get("self")
            t = obs.values[0]
            obs = (self.model.self_view(obs, me), obs.roles if t == 1 else None,
                   frozenset(tok for tok, _ in self.model.fresh_events(obs)))
        if isinstance(obs, (set, frozenset, list)):
            if not obs:
                return belief
            return self._tokens(set(belief.props), belief.scalar_dict(), obs)
        view, roster, tokens = obs
        props = set(belief.props)
        sc = belief.scalar_dict()
        if CRITICAL in props:
            # someone (the transport of matching rank) has stepped in
            props.discard(CRITICAL)
            sc["replaced"] += 1
            sc["scouts"] += 1
        role, at_start, at_end, has_route, alive = view
        props = {p for p in props if not p.startswith("Role(")}
        props.add(f"Role({role})")
        for name, on in (("atStart", at_start), ("atEnd", at_end), ("hasRoute", has_route), ("alive", alive)):
            if on:
                props.add(name)
            else:
                props.discard(name)
        if roster is not None:
            sc["scouts"] = sum(1 for r in roster if r in ROUTE_OF)
            me = sc["self"]
            sc["rank"] = sum(1 for j, r in enumerate(roster) if r == TRANSPORT and j < me)
        if role in ROUTE_OF and at_end:
            props.add(f"Scouted({ROUTE_OF[role]})")
        sc["time"] += 1
        return self._tokens(props, sc, tokens)

    def _tokens(self, props, sc, tokens):
        for tok in sorted(tokens):
            m = TOKEN.match(tok)
            if not m:
                continue
            route, what = int(m.group(2)), m.group(3)
            if what == "Failed":
                sc["failed"] += 1
                props.add(f"Failed({SCOUTS[route - 1]})")
            elif what == "Arrived":
                props.add(f"Scouted({route})")
        scouted = any(p.startswith("Scouted(") for p in props)
        if sc["failed"] > 0 and sc["failed"] >= sc["scouts"] and not scouted:
            props.add(CRITICAL)
        else:
            props.discard(CRITICAL)
        return BeliefState(frozenset(props), tuple(sorted(sc.items())))


KEEP_PREFIXES = ("Role(", "Scouted(")
KEEP_PROPS = {"atStart", "atEnd", "hasRoute", "alive"}


def reduce_belief(belief):
    """Keep only what the post-scouting plans read."""
    if belief is ABSENT_BELIEF:
        return belief
    props = frozenset(p for p in belief.props if p in KEEP_PROPS or p.startswith(KEEP_PREFIXES))
    return BeliefState.make(props, time=belief.get("time"), self=belief.get("self"),
                            rank=0, scouts=0, failed=0, replaced=0)


def _absent_except(model: MissionModel, keep, other_routes_matter=True):
    def project(s):
        t, cleared, scouted, loc, route, status = model.parts(s)
        loc, route, status, roles = list(loc), list(route), list(status), list(s.roles)
        for i, r in enumerate(roles):
            if not keep(r):
                roles[i], loc[i], route[i], status[i] = ABSENT, 0, 0, ALIVE
        if not other_routes_matter:
            scouted = tuple(v if r == cleared else 0 for r, v in zip((1, 2, 3), scouted))
        return model.pack(t, cleared, scouted, loc, route, status, roles)
    return project


def _reducer(s_proj, agent, belief):
    if s_proj.roles[agent] == ABSENT:
        return ABSENT_BELIEF
    return reduce_belief(belief)


def mission_components(model: MissionModel) -> dict:
    names = tuple(f.name for f in model.features)
    agents = tuple(range(model.n_agents))

    def scouting_over(t, s):
        return not model.scouting_active(s)

    return {
        "DoScouting": ComponentFactor(
            "DoScouting", model, names, agents, end=scouting_over, layout=names, clock="time"),
        "DoTransport": ComponentFactor(
            "DoTransport", model, names, agents, predecessors=("DoScouting",),
            siblings=("RemainingScouts",), project=_absent_except(model, lambda r: r == TRANSPORT, False),
            reduce_belief=_reducer, relevant=lambda tok: "Arrived" in tok, layout=names, clock="time"),
        "RemainingScouts": ComponentFactor(
            "RemainingScouts", model, names, agents, predecessors=("DoScouting",),
            siblings=("DoTransport",), project=_absent_except(model, lambda r: r in ROUTE_OF),
            reduce_belief=_reducer, relevant=lambda tok: False, layout=names, clock="time"),
    }


def load_top_text() -> str:
    return resources.files(__package__).joinpath("mission.top").read_text(encoding="utf-8")


def build_mission_rehearsal(params: MissionParams | None = None, **overrides) -> DomainInstance:
    params = replace(params or MissionParams(), **overrides) if overrides else (params or MissionParams())
    params.validate()
    top = parse_top(load_top_text())
    model = MissionModel(params)
    rule = MissionBeliefRule(model)
    incomplete = derive_incomplete_policy(top, model)
    plan = build_rmtdp(top, top.root, mission_components(model))
    space = build_allocation_space(top.org, params.n_helos)
    inst = DomainInstance("mission-rehearsal", params, top, model, plan, rule, incomplete, space,
                          agent_classes=("helo",) * params.n_helos)
    inst.builder = lambda p: build_mission_rehearsal(p)
    return inst
