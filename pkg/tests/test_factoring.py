import itertools

import pytest

from conftest import mission, mission_values
from rmtdp.domains.mission import mission_components
from rmtdp.evaluator import HistoryRule, evaluate_obs_history, evaluate_points, forward_ends
from rmtdp.factoring import (ComponentFactor, FactoringError, compose_parallel, compose_sequential,
                             project_state, remove_irrelevant_features)
from rmtdp.model import HISTORY, ExplicitModel, FactoredState, FeatureSpec, JointPolicy, LocalPolicy, execute

ACTS = ("a", "b")
T = 3


def _histories(obs_values):
    out = []
    for k in range(T):
        out.extend(itertools.product(obs_values, repeat=k))
    return out


def all_policies(obs_per_agent):
    """Every deterministic history-indexed joint policy (tables per agent)."""
    per_agent = []
    for i, obs in enumerate(obs_per_agent):
        hists = _histories(obs)
        per_agent.append([dict(zip(hists, (execute(i, a) for a in choice)))
                          for choice in itertools.product(ACTS, repeat=len(hists))])
    return itertools.product(*per_agent)


def value(model, tables):
    pol = JointPolicy(HISTORY, tuple(LocalPolicy(i, t) for i, t in enumerate(tables)))
    return evaluate_obs_history(model, pol).value


# ---------------------------------------------------------------- parallel

# per-factor kernels: x in {0,1}, action a pushes x up, b holds
def _step_a(x, act):
    if act == "a":
        return {1: 0.6, 0: 0.4} if x == 0 else {1: 0.9, 0: 0.1}
    return {x: 1.0}


def _step_b(x, act):
    if act == "a":
        return {1: 0.3, 0: 0.7} if x == 0 else {0: 0.5, 1: 0.5}
    return {0: 0.2, 1: 0.8} if x == 1 else {0: 1.0}


def _obs_a(x):
    return {x: 0.85, 1 - x: 0.15}


def _rew_a(x, act):
    return (2.0 if x else -1.0) - (0.5 if act == "a" else 0.0)


def _rew_b(x, act):
    return 3.0 * x - (1.0 if act == "a" else 0.0)


def _single(name, step, rew, obs=None):
    states = [FactoredState((x,), ("r",)) for x in (0, 1)]
    trans, obsd, rewd = {}, {}, {}
    for s in states:
        for act in ACTS:
            trans[(s, (act,))] = [(FactoredState((y,), ("r",)), p) for y, p in step(s.values[0], act).items()]
            rewd[(s, (act,))] = rew(s.values[0], act)
            if obs is not None:
                obsd[(s, (act,))] = [((o,), p) for o, p in obs(s.values[0]).items()]
    return ExplicitModel([FeatureSpec(name, (0, 1))], 1, ["r"], {"r": set(ACTS)}, {}, T,
                         [(states[0], 1.0)], transitions=trans, observations=obsd, rewards=rewd)


def _monolithic_parallel():
    states = [FactoredState((xa, xb), ("r", "r")) for xa in (0, 1) for xb in (0, 1)]
    trans, obsd, rewd = {}, {}, {}
    for s in states:
        xa, xb = s.values
        for aa, ab in itertools.product(ACTS, repeat=2):
            trans[(s, (aa, ab))] = [(FactoredState((ya, yb), ("r", "r")), pa * pb)
                                    for ya, pa in _step_a(xa, aa).items() for yb, pb in _step_b(xb, ab).items()]
            rewd[(s, (aa, ab))] = _rew_a(xa, aa) + _rew_b(xb, ab)
            obsd[(s, (aa, ab))] = [((o, None), p) for o, p in _obs_a(xa).items()]
    return ExplicitModel([FeatureSpec("xa", (0, 1)), FeatureSpec("xb", (0, 1))], 2, ["r"], {"r": set(ACTS)},
                         {}, T, [(states[0], 1.0)], transitions=trans, observations=obsd, rewards=rewd)


def test_parallel_composition_matches_monolithic_for_all_policies():
    ma = _single("xa", _step_a, _rew_a, _obs_a)
    mb = _single("xb", _step_b, _rew_b)
    composed = compose_parallel([ComponentFactor("A", ma, ("xa",), (0,)), ComponentFactor("B", mb, ("xb",), (1,))])
    mono = _monolithic_parallel()
    n = 0
    for tables in all_policies([(0, 1), (None,)]):
        assert value(composed, tables) == pytest.approx(value(mono, tables), abs=1e-9)
        n += 1
    assert n == 2 ** 7 * 2 ** 3


def test_parallel_rejects_shared_features_and_agents():
    ma = _single("xa", _step_a, _rew_a)
    with pytest.raises(FactoringError, match="feature"):
        compose_parallel([ComponentFactor("A", ma, ("xa",), (0,)), ComponentFactor("B", ma, ("xa",), (1,))])
    mb = _single("xb", _step_b, _rew_b)
    with pytest.raises(FactoringError, match="agent"):
        compose_parallel([ComponentFactor("A", ma, ("xa",), (0,)), ComponentFactor("B", mb, ("xb",), (0,))])


# ---------------------------------------------------------------- sequential
# stage one raises x (either agent may push); once x = 1 stage two works on y

def _phase(x, y, a0, a1, stage):
    if stage == 0:
        up = {("a", "a"): 0.8, ("a", "b"): 0.5, ("b", "a"): 0.5, ("b", "b"): 0.1}[(a0, a1)]
        succ = {(1, y): up, (0, y): 1 - up} if x == 0 else {(x, y): 1.0}
        r = -1.0 * ((a0 == "a") + (a1 == "a"))
    else:
        up = 0.7 if a0 == "b" and a1 == "b" else 0.4
        succ = {(x, 1): up, (x, 0): 1 - up} if y == 0 else {(x, 1): 1.0}
        r = 5.0 * y - 0.5 * (a0 == "a")
    return {k: v for k, v in succ.items() if v > 0}, r


def _obs(x, y):
    # identical in both stages so a stage-free monolithic model is equivalent
    return {(x, None): 0.9, (1 - x, None): 0.1}


def _stage_model(stage):
    states = [FactoredState((x, y), ("r", "r")) for x in (0, 1) for y in (0, 1)]
    trans, obsd, rewd = {}, {}, {}
    for s in states:
        x, y = s.values
        for a0, a1 in itertools.product(ACTS, repeat=2):
            succ, r = _phase(x, y, a0, a1, stage)
            trans[(s, (a0, a1))] = [(FactoredState(k, ("r", "r")), p) for k, p in succ.items()]
            rewd[(s, (a0, a1))] = r
            obsd[(s, (a0, a1))] = list(_obs(x, y).items())
    return ExplicitModel([FeatureSpec("x", (0, 1)), FeatureSpec("y", (0, 1))], 2, ["r"], {"r": set(ACTS)}, {}, T,
                         [(states[0], 1.0)], transitions=trans, observations=obsd, rewards=rewd)


def _monolithic_sequential():
    states = [FactoredState((x, y), ("r", "r")) for x in (0, 1) for y in (0, 1)]
    trans, obsd, rewd = {}, {}, {}
    for s in states:
        x, y = s.values
        for joint in itertools.product(ACTS, repeat=2):
            succ, r = _phase(x, y, *joint, 0 if x == 0 else 1)
            trans[(s, joint)] = [(FactoredState(k, ("r", "r")), p) for k, p in succ.items()]
            rewd[(s, joint)] = r
            obsd[(s, joint)] = list(_obs(x, y).items())
    return ExplicitModel([FeatureSpec("x", (0, 1)), FeatureSpec("y", (0, 1))], 2, ["r"], {"r": set(ACTS)}, {}, T,
                         [(states[0], 1.0)], transitions=trans, observations=obsd, rewards=rewd)


def test_sequential_composition_matches_monolithic_for_all_policies():
    names = ("x", "y")
    first = ComponentFactor("Raise", _stage_model(0), names, (0, 1), end=lambda t, s: s.values[0] == 1)
    second = ComponentFactor("Work", _stage_model(1), names, (0, 1), predecessors=("Raise",))
    composed = compose_sequential([first, second])
    mono = _monolithic_sequential()
    n = 0
    for tables in all_policies([(0, 1), (None,)]):
        assert value(composed, tables) == pytest.approx(value(mono, tables), abs=1e-9)
        n += 1
    assert n == 1024


def test_sequential_of_one_factor_is_that_model():
    m = _stage_model(0)
    assert compose_sequential([ComponentFactor("only", m, ("x", "y"), (0, 1))]) is m


def test_sequential_needs_matching_layouts():
    a = _single("xa", _step_a, _rew_a)
    b = _stage_model(0)
    with pytest.raises(FactoringError):
        compose_sequential([ComponentFactor("A", a, ("xa",), (0,)), ComponentFactor("B", b, ("x", "y"), (0, 1))])


def test_projection_keeps_named_features():
    m = _stage_model(0)
    fac = ComponentFactor("X", m, ("x",), (0, 1))
    s = FactoredState((1, 0), ("r", "r"))
    got = project_state(s, fac, ("x", "y"))
    assert got.values == (1,)
    assert remove_irrelevant_features([s, FactoredState((1, 1), ("r", "r"))], fac, ("x", "y")) == {got}


# ---------------------------------------------------------------- mission decomposition

@pytest.mark.parametrize("n,horizon", [(3, 6), (4, 6)])
def test_mission_value_splits_at_scouting_end(n, horizon):
    """Scouting value to its end plus, per end point, transport and remaining-scout values."""
    d = mission(n, horizon)
    comps = mission_components(d.model)
    scout, transport, rest = comps["DoScouting"], comps["DoTransport"], comps["RemainingScouts"]
    exact = mission_values(n, horizon)
    for leaf in d.space.leaves():
        pol = d.policy_for(leaf)
        start = [(0, s, tuple(d.rule.initial(i) for i in range(n))) for s, _ in d.model.start]
        [v_scout], _ = evaluate_points(d.model, pol, d.rule, start, stop=scout.end)
        ends = forward_ends(d.model, pol, d.rule, scout.end)
        total = v_scout
        for (t, s, beliefs), p in ends.items():
            for fac in (transport, rest):
                s2 = fac.project(s)
                b2 = tuple(fac.reduce_belief(s2, a, b) for a, b in enumerate(beliefs))
                [v], _ = evaluate_points(fac.model, pol, d.rule, [(t, s2, b2)])
                total += p * v
        assert total == pytest.approx(exact[leaf.vector()], abs=1e-9)


def test_history_rule_is_the_raw_sequence():
    r = HistoryRule()
    assert r.update(r.update(r.initial(0), 1), 2) == (1, 2)
