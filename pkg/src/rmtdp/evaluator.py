"""Exact and sampled expected-reward evaluation of joint policies."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import HISTORY, PROB_TOL, History, JointPolicy, PolicyError, RmtdpModel


class EvaluationError(RuntimeError):
    pass


@dataclass
class EvalStats:
    node_expansions: int = 0
    distinct_indices: tuple = ()
    wall_time: float = 0.0


@dataclass
class EvalResult:
    value: float
    stats: EvalStats = field(default_factory=EvalStats)


def _starts(model, start):
    if start is None:
        return [((0, s, None), p) for s, p in model.start]
    return start


class _Kernels:
    """Per-evaluation caches of P, O, R and belief updates."""

    def __init__(self, model, rule=None):
        self.model = model
        self.rule = rule
        self.trans: dict = {}
        self.obs: dict = {}
        self.rew: dict = {}
        self.upd: dict = {}

    def step(self, s, joint):
        key = (s, joint)
        hit = self.trans.get(key)
        if hit is None:
            hit = [(s2, p) for s2, p in self.model.transition(s, joint) if p > 0.0]
            self.trans[key] = hit
            self.rew[key] = self.model.reward(s, joint)
        return hit, self.rew[key]

    def observe(self, s2, joint):
        key = (s2, joint)
        hit = self.obs.get(key)
        if hit is None:
            hit = [(o, q) for o, q in self.model.observation(s2, joint) if q > 0.0]
            self.obs[key] = hit
        return hit

    def update(self, b, o):
        key = (b, o)
        hit = self.upd.get(key)
        if hit is None:
            hit = self.rule.update(b, o)
            self.upd[key] = hit
        return hit


def _actions(policy, indices):
    try:
        return policy.actions(indices)
    except PolicyError as exc:
        raise EvaluationError(str(exc)) from None


def _check_mass(dist, what, key):
    total = math.fsum(p for _, p in dist)
    if abs(total - 1.0) > PROB_TOL:
        raise EvaluationError(f"{what} mass {total:.12g} at {key}")


def evaluate_obs_history(model: RmtdpModel, policy: JointPolicy, debug: bool = False) -> EvalResult:
    """Expected reward by recursion over (state, joint observation history); nothing is memoized."""
    t0 = time.perf_counter()
    k = _Kernels(model)
    n = model.n_agents
    T = model.horizon
    seen = [set() for _ in range(n)]
    counter = [0]

    def V(t, s, hists):
        counter[0] += 1
        if t >= T:
            return 0.0
        for i, h in enumerate(hists):
            seen[i].add(h)
        joint = _actions(policy, hists)
        succ, r = k.step(s, joint)
        if debug:
            _check_mass(succ, "transition", (t, s))
        total = r
        for s2, p in succ:
            obs = k.observe(s2, joint)
            if debug:
                _check_mass(obs, "observation", (t, s2))
            for o, q in obs:
                total += p * q * V(t + 1, s2, tuple(h.extend(oi) for h, oi in zip(hists, o)))
        return total

    roots = tuple(History() for _ in range(n))
    value = 0.0
    for s, p in model.start:
        if p > 0:
            value += p * V(0, s, roots)
    stats = EvalStats(counter[0], tuple(len(x) for x in seen), time.perf_counter() - t0)
    return EvalResult(value, stats)


def _belief_solver(model, policy, rule, stop, debug):
    k = _Kernels(model, rule)
    n = model.n_agents
    T = model.horizon
    memo: dict = {}
    seen = [set() for _ in range(n)]
    counter = [0]

    def V(t, s, beliefs):
        key = (t, s, beliefs)
        hit = memo.get(key)
        if hit is not None:
            return hit
        counter[0] += 1
        if t >= T or (stop is not None and stop(t, s)):
            memo[key] = 0.0
            return 0.0
        for i, b in enumerate(beliefs):
            seen[i].add(b)
        joint = _actions(policy, beliefs)
        succ, r = k.step(s, joint)
        if debug:
            _check_mass(succ, "transition", (t, s))
        total = r
        for s2, p in succ:
            obs = k.observe(s2, joint)
            if debug:
                _check_mass(obs, "observation", (t, s2))
            # observations that leave every agent with the same beliefs share one branch
            merged: dict = {}
            for o, q in obs:
                nb = tuple(k.update(b, oi) for b, oi in zip(beliefs, o))
                merged[nb] = merged.get(nb, 0.0) + q
            for nb, q in merged.items():
                total += p * q * V(t + 1, s2, nb)
        memo[key] = total
        return total

    return V, counter, seen


def evaluate_belief(model: RmtdpModel, policy: JointPolicy, rule, start=None, stop=None,
                    debug: bool = False) -> EvalResult:
    """Expected reward by recursion over (t, state, joint belief) with memoization.

    ``start`` optionally replaces the model start with ``[((t, state, beliefs), p), ...]``
    (``beliefs`` None means the rule's initial beliefs).  ``stop(t, state)`` ends a
    branch with value 0, used to evaluate one component of a sequential plan.
    """
    t0 = time.perf_counter()
    V, counter, seen = _belief_solver(model, policy, rule, stop, debug)
    initial = tuple(rule.initial(i) for i in range(model.n_agents))
    value = 0.0
    for (t, s, beliefs), p in _starts(model, start):
        if p > 0:
            value += p * V(t, s, initial if beliefs is None else beliefs)
    stats = EvalStats(counter[0], tuple(len(x) for x in seen), time.perf_counter() - t0)
    return EvalResult(value, stats)


def evaluate_points(model: RmtdpModel, policy: JointPolicy, rule, points, stop=None) -> tuple:
    """Values from each (t, state, beliefs) point, sharing one memo; returns (values, expansions)."""
    V, counter, _ = _belief_solver(model, policy, rule, stop, False)
    initial = tuple(rule.initial(i) for i in range(model.n_agents))
    values = [V(t, s, initial if b is None else b) for t, s, b in points]
    return values, counter[0]


def forward_ends(model: RmtdpModel, policy: JointPolicy, rule, stop, start=None) -> dict:
    """Distribution over the first (t, state, beliefs) at which ``stop`` holds."""
    k = _Kernels(model, rule)
    n = model.n_agents
    initial = tuple(rule.initial(i) for i in range(n))
    layer: dict = {}
    for (t, s, beliefs), p in _starts(model, start):
        key = (t, s, initial if beliefs is None else beliefs)
        layer[key] = layer.get(key, 0.0) + p
    ends: dict = {}
    while layer:
        nxt: dict = {}
        for (t, s, beliefs), mass in layer.items():
            if stop(t, s):
                ends[(t, s, beliefs)] = ends.get((t, s, beliefs), 0.0) + mass
                continue
            if t >= model.horizon:
                continue
            joint = _actions(policy, beliefs)
            succ, _ = k.step(s, joint)
            for s2, p in succ:
                for o, q in k.observe(s2, joint):
                    nb = tuple(k.update(b, oi) for b, oi in zip(beliefs, o))
                    key = (t + 1, s2, nb)
                    nxt[key] = nxt.get(key, 0.0) + mass * p * q
        layer = nxt
    return ends


def _draw(rng, dist):
    u = rng.random()
    acc = 0.0
    for item, p in dist:
        acc += p
        if u < acc:
            return item
    return dist[-1][0]


def monte_carlo_estimate(model: RmtdpModel, policy: JointPolicy, rule, runs: int, seed: int):
    """Mean total reward and its standard error over seeded rollouts."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    rng = np.random.default_rng(seed)
    k = _Kernels(model, rule)
    n = model.n_agents
    index_history = policy.index_kind == HISTORY
    totals = np.empty(runs)
    for run in range(runs):
        s = _draw(rng, model.start)
        if index_history:
            idx = tuple(History() for _ in range(n))
        else:
            idx = tuple(rule.initial(i) for i in range(n))
        total = 0.0
        for _ in range(model.horizon):
            joint = _actions(policy, idx)
            succ, r = k.step(s, joint)
            total += r
            s = _draw(rng, succ)
            o = _draw(rng, k.observe(s, joint))
            if index_history:
                idx = tuple(h.extend(oi) for h, oi in zip(idx, o))
            else:
                idx = tuple(k.update(b, oi) for b, oi in zip(idx, o))
        totals[run] = total
    mean = float(totals.mean())
    se = float(totals.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0
    return mean, se


class FullyObservableModel(RmtdpModel):
    """Wraps a model so every agent observes the successor state exactly."""

    def __init__(self, base: RmtdpModel):
        self.__dict__.update(base.__dict__)
        self.base = base
        self._obs_cache = {}

    def transition(self, state, joint):
        return self.base.transition(state, joint)

    def reward(self, state, joint):
        return self.base.reward(state, joint)

    def observation(self, state, joint):
        return [((state,) * self.n_agents, 1.0)]

    def __getattr__(self, name):
        return getattr(self.__dict__["base"], name)


def make_fully_observable(model: RmtdpModel) -> RmtdpModel:
    if isinstance(model, FullyObservableModel):
        return model
    return FullyObservableModel(model)


class HistoryRule:
    """Belief that is the raw observation sequence itself."""

    def initial(self, agent):
        return ()

    def update(self, belief, obs):
        return belief + (obs,)


class AppendingRule:
    """Runs ``base`` while also appending every observation, so beliefs never merge."""

    def __init__(self, base):
        self.base = base

    def initial(self, agent):
        return (self.base.initial(agent), ())

    def update(self, belief, obs):
        inner, seq = belief
        return (self.base.update(inner, obs), seq + (obs,))


class ProjectedPolicy(JointPolicy):
    """Reads only the first component of (belief, extra) indices."""

    def __init__(self, base: JointPolicy):
        super().__init__(base.index_kind, base.locals)

    def actions(self, indices):
        return super().actions(tuple(ix[0] for ix in indices))
