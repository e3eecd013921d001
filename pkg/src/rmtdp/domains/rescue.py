"""Scaled disaster rescue: engine-to-fire allocation, then message-conditioned ambulance allocation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources

from ..allocation import build_allocation_space
from ..factoring import ComponentFactor, build_rmtdp
from ..model import ABSENT, EXECUTE, TAKE, UNASSIGNED, FactoredState, FeatureSpec, ModelError, RmtdpModel
from ..top import ABSENT_BELIEF, BeliefState, BeliefUpdateRule, derive_incomplete_policy, parse_top
from .base import DomainInstance

FIRES = (1, 2)
STATIONS = (1, 2, 3)
ENGINE_ROLES = {f"engine{'AB'[k - 1]}{s}": (k, s) for k in FIRES for s in STATIONS}
AMBULANCE_ROLES = {"ambulanceA": 1, "ambulanceB": 2}
JOINS = {r: "join" + r[0].upper() + r[1:] for r in list(ENGINE_ROLES) + list(AMBULANCE_ROLES)}
EXTINGUISH, RESCUE = "extinguish", "rescue"
TAG = "c"
OUT, LOW, HIGH = 0, 1, 2


def _binomial(n: int, p: float) -> list:
    if p <= 0.0 or n == 0:
        return [(0, 1.0)]
    if p >= 1.0:
        return [(n, 1.0)]
    return [(k, math.comb(n, k) * p ** k * (1 - p) ** (n - k)) for k in range(n + 1)]


@dataclass(frozen=True)
class RescueParams:
    engines: tuple = (1, 1, 0)
    ambulances: int = 2
    civilians: int = 3
    # "uniform", "skewed", or a mapping c -> probability over c = 1 .. civilians-1
    civilian_distribution: object = "uniform"
    horizon: int = 6
    fire_growth: float = 0.1
    deterioration: float = 0.1
    extinguish: tuple = (0.5, 0.25)  # per-engine success against a low / high fire
    # reach[station-1][fire-1] scales an engine's effectiveness by distance
    reach: tuple = ((1.0, 0.5), (0.75, 0.75), (0.5, 1.0))
    rescue_prob: float = 0.7
    observe_out: float = 0.9
    initial_fire: tuple = (LOW, LOW)
    r_save: float = 10.0
    r_damage: float = -1.0

    def validate(self):
        if len(self.engines) != 3 or any(e < 0 for e in self.engines):
            raise ModelError("engines needs three non-negative station counts")
        if self.ambulances < 0:
            raise ModelError("ambulances must be non-negative")
        if self.civilians < 2:
            raise ModelError("need at least two civilians so that each fire holds one")
        if self.horizon < 0:
            raise ModelError("horizon must be non-negative")
        for name in ("fire_growth", "deterioration", "rescue_prob", "observe_out"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ModelError(f"{name} must lie in [0, 1]")
        if len(self.extinguish) != 2 or not all(0.0 <= p <= 1.0 for p in self.extinguish):
            raise ModelError("extinguish needs two probabilities in [0, 1]")
        if len(self.reach) != 3 or any(len(r) != 2 or not all(0.0 <= x <= 1.0 for x in r) for r in self.reach):
            raise ModelError("reach needs a 3x2 table of factors in [0, 1]")
        if any(f not in (OUT, LOW, HIGH) for f in self.initial_fire) or len(self.initial_fire) != 2:
            raise ModelError("initial_fire needs two levels in {0, 1, 2}")
        dist = self.distribution()
        if abs(sum(dist.values()) - 1.0) > 1e-9:
            raise ModelError("civilian distribution must sum to 1")
        if any(c not in self.messages() or p < 0 for c, p in dist.items()):
            raise ModelError(f"civilian distribution must cover c in 1..{self.civilians - 1}")
        return self

    def messages(self) -> tuple:
        return tuple(range(1, self.civilians))

    def distribution(self) -> dict:
        d = self.civilian_distribution
        msgs = self.messages()
        if d == "uniform":
            return {c: 1.0 / len(msgs) for c in msgs}
        if d == "skewed":
            hi, lo = msgs[-1], msgs[0]
            return {hi: 1.0} if hi == lo else {hi: 0.8, lo: 0.2}
        if isinstance(d, dict):
            return {int(k): float(v) for k, v in d.items()}
        raise ModelError(f"unknown civilian distribution {d!r}")

    @property
    def agent_classes(self) -> tuple:
        out = []
        for s, n in zip(STATIONS, self.engines):
            out += [f"station{s}"] * n
        return tuple(out) + ("ambulance",) * self.ambulances


class RescueModel(RmtdpModel):
    """State values: (time, c, fire_1, fire_2, healthy_1, injured_1, healthy_2, injured_2).

    ``c`` is the number of civilians at fire 1 (fixed at the start).  Fires
    burn at level 1 or 2 until out (0); civilians deteriorate healthy ->
    injured -> dead.  Ambulances learn c once both fires are out, and rescue
    only at an extinguished fire.  There are no agent failures.
    """

    failure_monotone = True

    def __init__(self, params: RescueParams):
        params.validate()
        self.params = params
        self.classes = params.agent_classes
        n = len(self.classes)
        C = params.civilians
        T = params.horizon
        features = [FeatureSpec("time", tuple(range(T + 1))), FeatureSpec("c", params.messages()),
                    FeatureSpec("fire_1", (OUT, LOW, HIGH)), FeatureSpec("fire_2", (OUT, LOW, HIGH))]
        for k in FIRES:
            features += [FeatureSpec(f"healthy_{k}", tuple(range(C + 1))),
                         FeatureSpec(f"injured_{k}", tuple(range(C + 1)))]
        roles = list(ENGINE_ROLES) + list(AMBULANCE_ROLES)
        execution = {r: {EXTINGUISH} for r in ENGINE_ROLES}
        execution.update({r: {RESCUE} for r in AMBULANCE_ROLES})
        taking = {UNASSIGNED: tuple(roles)}
        f1, f2 = params.initial_fire
        start = [(FactoredState((0, c, f1, f2, c, 0, C - c, 0), (UNASSIGNED,) * n), p)
                 for c, p in sorted(params.distribution().items()) if p > 0]
        super().__init__(features, n, roles, execution, taking, T, start, JOINS)
        self._cache: dict = {}

    def fires_out(self, s) -> bool:
        return s.values[2] == OUT and s.values[3] == OUT

    def without_failures(self) -> "RescueModel":
        return self

    def _step(self, s, joint):
        key = (s, joint)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        P = self.params
        t, c, f1, f2, h1, i1, h2, i2 = s.values
        roles = list(s.roles)
        fire = {1: f1, 2: f2}
        civ = {1: (h1, i1), 2: (h2, i2)}
        reward = P.r_damage * (f1 + f2)
        engines = {1: [], 2: []}
        ambulances = {1: 0, 2: 0}
        for i, a in enumerate(joint):
            role = roles[i]
            if role == ABSENT:
                continue
            if a.kind == TAKE and role == UNASSIGNED:
                roles[i] = a.target_role
            elif a.kind == EXECUTE:
                if a.name == EXTINGUISH and role in ENGINE_ROLES:
                    k, station = ENGINE_ROLES[role]
                    engines[k].append(station)
                elif a.name == RESCUE and role in AMBULANCE_ROLES:
                    ambulances[AMBULANCE_ROLES[role]] += 1
        # fire dynamics: any successful engine lowers the level, otherwise a low fire may grow
        fire_dist = {}
        for k in FIRES:
            lvl = fire[k]
            if lvl == OUT:
                fire_dist[k] = [(OUT, 1.0)]
                continue
            miss = 1.0
            for station in engines[k]:
                miss *= 1.0 - P.extinguish[lvl - 1] * P.reach[station - 1][k - 1]
            grow = P.fire_growth if lvl == LOW else 0.0
            out = {lvl - 1: 1.0 - miss}
            out[min(lvl + 1, HIGH)] = out.get(min(lvl + 1, HIGH), 0.0) + miss * grow
            out[lvl] = out.get(lvl, 0.0) + miss * (1.0 - grow)
            fire_dist[k] = [(v, p) for v, p in out.items() if p > 0.0]
        # civilians: rescue (injured first) at extinguished fires, then deterioration
        civ_dist = {}
        for k in FIRES:
            h, inj = civ[k]
            outcomes = {}
            n_amb = ambulances[k] if fire[k] == OUT else 0
            for saved, p_s in _binomial(n_amb, P.rescue_prob):
                saved = min(saved, h + inj)
                from_inj = min(saved, inj)
                h_left, i_left = h - (saved - from_inj), inj - from_inj
                for worse_h, p_h in _binomial(h_left, P.deterioration):
                    for worse_i, p_i in _binomial(i_left, P.deterioration):
                        nxt = (h_left - worse_h, i_left - worse_i + worse_h)
                        prob = p_s * p_h * p_i
                        if prob > 0.0:
                            o = outcomes.setdefault(nxt, [0.0, 0.0])
                            o[0] += prob
                            o[1] += prob * saved
            reward += P.r_save * sum(v[1] for v in outcomes.values())
            civ_dist[k] = [(st, v[0]) for st, v in outcomes.items()]
        t2 = min(t + 1, self.horizon)
        succ = []
        roles = tuple(roles)
        for n1, p1 in fire_dist[1]:
            for n2, p2 in fire_dist[2]:
                for (a1, b1), q1 in civ_dist[1]:
                    for (a2, b2), q2 in civ_dist[2]:
                        succ.append((FactoredState((t2, c, n1, n2, a1, b1, a2, b2), roles), p1 * p2 * q1 * q2))
        out = (succ, reward)
        self._cache[key] = out
        return out

    def transition(self, state, joint):
        return self._step(state, joint)[0]

    def reward(self, state, joint):
        return self._step(state, joint)[1]

    def view(self, s, i):
        """Noise-free part of agent i's observation of successor state ``s``."""
        role = s.roles[i]
        v = s.values
        if role in AMBULANCE_ROLES:
            k = AMBULANCE_ROLES[role]
            cleared = v[2 + k - 1] == OUT and v[2 + 2 * k] + v[3 + 2 * k] == 0
        else:
            cleared = False
        message = v[1] if self.fires_out(s) and self.classes[i] == "ambulance" else None
        return role, message, cleared

    def agent_observation(self, s, joint, i):
        role = s.roles[i]
        if role == ABSENT:
            return [(None, 1.0)]
        base = self.view(s, i)
        if role in ENGINE_ROLES:
            k = ENGINE_ROLES[role][0]
            if s.values[2 + k - 1] == OUT:
                q = self.params.observe_out
                return [(o, p) for o, p in ((base + (True,), q), (base + (False,), 1.0 - q)) if p > 0.0]
        return [(base + (False,), 1.0)]


class RescueBeliefRule(BeliefUpdateRule):
    """Beliefs: Role(r), fireOut (engine saw its fire out), firesOut and c (ambulances), cleared."""

    def __init__(self, model: RescueModel):
        self.model = model

    def initial(self, agent):
        return BeliefState.make((), self=agent)

    def update(self, belief, obs):
        if obs is None or belief is ABSENT_BELIEF:
            return belief
        if isinstance(obs, FactoredState):
            me = belief.get("self")
            role = obs.roles[me]
            out = role in ENGINE_ROLES and obs.values[2 + ENGINE_ROLES[role][0] - 1] == OUT
            obs = self.model.view(obs, me) + (out,)
        role, message, cleared, saw_out = obs
        props = {p for p in belief.props if not p.startswith("Role(") and p != "cleared"}
        sc = belief.scalar_dict()
        if role != UNASSIGNED:
            props.add(f"Role({role})")
        if saw_out:
            props.add("fireOut")
        if cleared:
            props.add("cleared")
        if message is not None:
            props.add("firesOut")
            sc[TAG] = message
        return BeliefState(frozenset(props), tuple(sorted(sc.items())))


def _ambulances_only(model: RescueModel):
    def project(s):
        roles = tuple(r if model.classes[i] == "ambulance" else ABSENT for i, r in enumerate(s.roles))
        return FactoredState(s.values, roles)
    return project


def _reducer(s_proj, agent, belief):
    return ABSENT_BELIEF if s_proj.roles[agent] == ABSENT else belief


def rescue_components(model: RescueModel) -> dict:
    names = tuple(f.name for f in model.features)
    n = model.n_agents
    engines = tuple(i for i, c in enumerate(model.classes) if c != "ambulance")
    amb = tuple(i for i, c in enumerate(model.classes) if c == "ambulance")

    def out(k):
        return lambda t, s: s.values[1 + k] == OUT

    return {
        "ExtinguishFire1": ComponentFactor("ExtinguishFire1", model, names, engines, end=out(1),
                                           siblings=("ExtinguishFire2",), layout=names, clock="time"),
        "ExtinguishFire2": ComponentFactor("ExtinguishFire2", model, names, engines, end=out(2),
                                           siblings=("ExtinguishFire1",), layout=names, clock="time"),
        "RescueCivilians": ComponentFactor("RescueCivilians", model, names, amb or tuple(range(n)),
                                           predecessors=("ExtinguishFire1", "ExtinguishFire2"),
                                           project=_ambulances_only(model), reduce_belief=_reducer,
                                           layout=names, clock="time"),
    }


def load_top_text() -> str:
    return resources.files(__package__).joinpath("rescue.top").read_text(encoding="utf-8")


def build_rescue_scaled(params: RescueParams | None = None, message_values=None, **overrides) -> DomainInstance:
    """Rescue instance.  ``message_values`` overrides the allocation-space messages (default 1..civilians-1)."""
    params = replace(params or RescueParams(), **overrides) if overrides else (params or RescueParams())
    params.validate()
    top = parse_top(load_top_text())
    model = RescueModel(params)
    rule = RescueBeliefRule(model)
    messages = tuple(message_values) if message_values is not None else params.messages()
    incomplete = derive_incomplete_policy(top, model, params.agent_classes, messages={TAG: messages})
    plan = build_rmtdp(top, top.root, rescue_components(model))
    counts = {f"station{s}": n for s, n in zip(STATIONS, params.engines)}
    counts["ambulance"] = params.ambulances
    space = build_allocation_space(top.org, counts, {TAG: messages})
    inst = DomainInstance("rescue-scaled", params, top, model, plan, rule, incomplete, space,
                          agent_classes=params.agent_classes)
    inst.builder = lambda p: build_rescue_scaled(p)
    return inst
