import pytest
from hypothesis import given, strategies as st

from conftest import mission, rescue
from oracle import belief_actor, trajectories
from rmtdp.conditions import ConditionError, EvalContext, parse_condition
from rmtdp.domains.mission import CRITICAL, load_top_text
from rmtdp.model import NOOP
from rmtdp.top import (BeliefState, CompletenessError, DecisionPoint, TopError, TopParseError,
                       belief_update, complete_policy, parse_top, steam_reallocate, topological_layers)

MINI = """
org {
  Team {
    A : roleA class agent
    B : roleB class agent
  }
}
plan Root {
  team: Team;
  body: [First, Second];
  constraints: First -> Second;
}
plan First { team: A; achieved: done; body: [go]; }
plan Second { team: B; body: [go]; }
"""


# ---------------------------------------------------------------- parsing

def test_mission_document_structure():
    top = parse_top(load_top_text())
    root = top.root
    assert root.name == "ExecuteMission"
    assert [c.name for c in root.children] == ["DoScouting", "DoTransport", "RemainingScouts"]
    assert root.constraints == [("DoScouting", "DoTransport"), ("DoScouting", "RemainingScouts")]
    assert [list(layer) for layer in topological_layers(root)] == [
        ["DoScouting"], ["DoTransport", "RemainingScouts"]]
    assert top.criticality["memberSctTeamA"] == 1 and top.criticality["memberTransportTeam"] == 0


def test_minimal_document_is_one_plan():
    top = parse_top("org { Solo : r class agent }\nplan P { team: Solo; }")
    assert top.root.name == "P" and top.root.children == [] and top.root.body == []


def test_constraint_cycle_is_rejected():
    bad = MINI.replace("constraints: First -> Second;", "constraints: First -> Second, Second -> First;")
    with pytest.raises(TopParseError, match="cyclic"):
        parse_top(bad)


def test_unknown_team_reports_its_line():
    bad = MINI.replace("plan Second { team: B;", "plan Second { team: Nobody;")
    with pytest.raises(TopParseError, match="unknown team") as exc:
        parse_top(bad)
    assert exc.value.line == 14


def test_malformed_condition():
    with pytest.raises(TopParseError):
        parse_top(MINI.replace("achieved: done;", "achieved: done & ;"))
    with pytest.raises(ConditionError):
        parse_condition("(a | b")


def test_combinator_needs_two_children():
    bad = MINI.replace("plan First { team: A;", "plan First { team: A; combinator: AND;")
    with pytest.raises(TopParseError, match="at least two"):
        parse_top(bad)


def test_conditioned_org_leaves():
    top = rescue().top
    tags = {leaf.name: leaf.message for leaf in top.org.leaves()}
    assert tags["AmbulanceTeamA"] == "c" and tags["EngineA1"] is None
    assert top.conditioned_classes() == {"ambulance": "c"}


# ---------------------------------------------------------------- conditions

def _ctx(props=(), **scalars):
    return EvalContext(BeliefState.make(props, **scalars), {"T": 10})


@pytest.mark.parametrize("text,expected", [
    ("a & b", False), ("a | b", True), ("~b", True), ("time < T", True), ("time = 3", True),
    ("time >= 4", False), ("MB Team a", True), ("~(a & ~b)", False), ("time != 3 | a", True),
])
def test_condition_language(text, expected):
    assert parse_condition(text).evaluate(_ctx({"a"}, time=3)) is expected


@given(st.sets(st.sampled_from("pqr")), st.integers(0, 9))
def test_conditions_are_pure(props, t):
    cond = parse_condition("(p & ~q) | time > 4 | r")
    ctx = _ctx(props, time=t)
    first = cond.evaluate(ctx)
    assert cond.evaluate(ctx) == first == (("p" in props and "q" not in props) or t > 4 or "r" in props)


# ---------------------------------------------------------------- belief update

TRANSPORT_VIEW = ("memberTransportTeam", True, False, False, True)
ROSTER = ("memberSctTeamA", "memberSctTeamB", "memberTransportTeam")
F1, F2 = "sct1OnRoute1Failed", "sct2OnRoute2Failed"


def _fold(rule, seq, agent=2):
    b = rule.initial(agent)
    for o in seq:
        b = belief_update(rule, b, o)
    return b


def test_simultaneous_failures_are_critical():
    rule = mission(3, 6).rule
    b = _fold(rule, [(TRANSPORT_VIEW, ROSTER, frozenset())])
    assert CRITICAL not in b.props
    b2 = belief_update(rule, b, frozenset({F1, F2}))
    assert CRITICAL in b2.props
    assert belief_update(rule, b, frozenset()) == b
    assert belief_update(rule, b, None) == b


def test_failure_orders_collapse_to_one_belief():
    rule = mission(3, 6).rule
    start = (TRANSPORT_VIEW, ROSTER, frozenset())

    def step(*toks):
        return (TRANSPORT_VIEW, None, frozenset(toks))

    histories = [
        [start, step(F1), step(F2)],
        [start, step(F2), step(F1)],
        [start, step(), step(F1, F2)],
    ]
    finals = {_fold(rule, h) for h in histories}
    assert len(finals) == 1
    (b,) = finals
    assert CRITICAL in b.props


def test_update_is_deterministic():
    rule = mission(3, 6).rule
    seq = [(TRANSPORT_VIEW, ROSTER, frozenset()), (TRANSPORT_VIEW, None, frozenset({F1}))]
    assert _fold(rule, seq) == _fold(rule, seq)
    assert hash(_fold(rule, seq)) == hash(_fold(rule, seq))


@pytest.mark.parametrize("vector", [(1, 0, 0, 2), (1, 1, 0, 1), (0, 2, 0, 1)])
def test_beliefs_never_outnumber_histories(vector):
    d = mission(3, 6)
    paths = trajectories(d.model, belief_actor(d.policy_for(d.leaf_by_vector(vector)), d.rule))
    for agent in range(3):
        for t in range(d.model.horizon + 1):
            hists = {h[agent][:t] for _, _, _, h in paths}
            beliefs = {_fold(d.rule, h, agent) for h in hists}
            assert len(beliefs) <= len(hists)


# ---------------------------------------------------------------- policies

def test_mission_has_one_open_point_at_the_start():
    d = mission(6, 4)
    assert d.incomplete.open_points == [DecisionPoint("helo")]
    b0 = d.rule.initial(0)
    assert d.incomplete.decide(0, b0) == DecisionPoint("helo")


def test_leaf_completion_assigns_roles_in_order():
    d = mission(6, 4)
    pol = d.policy_for(d.leaf_by_vector((1, 0, 0, 5)))
    names = [pol.locals[i].decision(d.rule.initial(i)).action.name for i in range(6)]
    assert names == ["joinSctTeamA"] + ["joinTransportTeam"] * 5


def test_completion_keeps_filled_entries():
    d = mission(3, 6)
    pol = d.policy_for(d.leaf_by_vector((1, 0, 0, 2)))
    b = _fold(d.rule, [(TRANSPORT_VIEW, ROSTER, frozenset())])
    for agent in range(3):
        filled = d.incomplete.decide(agent, b)
        if not isinstance(filled, DecisionPoint):
            assert pol.locals[agent].decision(b) == filled


def test_transport_follows_scouted_route():
    d = mission(3, 6)
    rule = d.rule
    b = _fold(rule, [(TRANSPORT_VIEW, ROSTER, frozenset()),
                     (TRANSPORT_VIEW, None, frozenset({"sct1OnRoute1Arrived"}))])
    assert "Scouted(1)" in b.props
    assert d.incomplete.decide(2, b).action.name == "chooseRoute"
    moving = _fold(rule, [(TRANSPORT_VIEW, ROSTER, frozenset()),
                          (("memberTransportTeam", False, False, True, True), None, frozenset()),
                          ])
    moving = BeliefState(moving.props | {"Scouted(1)"}, moving.scalars)
    assert d.incomplete.decide(2, moving).action.name == "moveForward"


def test_replacement_on_critical_failure():
    d = mission(3, 6)
    b = _fold(d.rule, [(TRANSPORT_VIEW, ROSTER, frozenset()), frozenset({F1, F2})])
    act = d.incomplete.decide(2, b).action
    # the first failed critical role in organization order is taken over
    assert act.name == "joinSctTeamA"


def test_terminated_plans_give_noop():
    top = parse_top(MINI)

    class One:
        n_agents = 2
        horizon = 3
        execution = {"roleA": {"go"}, "roleB": {"go"}}

    from rmtdp.top import derive_incomplete_policy
    inc = derive_incomplete_policy(top, One())
    done = BeliefState.make({"Role(roleA)", "done"})
    assert inc.decide(0, done).action.kind == NOOP
    busy = BeliefState.make({"Role(roleA)"})
    assert inc.decide(0, busy).action.name == "go"
    # B waits until First is achieved
    assert inc.decide(1, BeliefState.make({"Role(roleB)"})).action.kind == NOOP
    assert inc.decide(1, BeliefState.make({"Role(roleB)", "done"})).action.name == "go"


def test_unknown_primitive_is_rejected():
    top = parse_top(MINI)

    class Model:
        n_agents = 2
        horizon = 3
        execution = {"roleA": {"stay"}}

    from rmtdp.top import derive_incomplete_policy
    with pytest.raises(TopError, match="unknown to the model"):
        derive_incomplete_policy(top, Model())


def test_rescue_branches_fill_both_messages():
    d = rescue()
    leaf = d.space.leaves()[0]
    assert set(leaf.condition_branches) == {1, 2}
    pol = d.policy_for(leaf)
    amb = [i for i, c in enumerate(d.agent_classes) if c == "ambulance"]
    for c in (1, 2):
        b = BeliefState.make((), c=c, self=amb[0])
        assert pol.locals[amb[0]].decision(b).taking is not None


def test_missing_branch_is_a_completeness_error():
    d = rescue()
    a = d.assignment(d.space.leaves()[0])
    partial = a._replace(roles={k: v for k, v in a.roles.items() if k.value != 2})
    with pytest.raises(CompletenessError):
        complete_policy(d.incomplete, partial)


# ---------------------------------------------------------------- STEAM

@pytest.mark.parametrize("failed,cand,expected", [("s", "t", True), ("s", "s2", False), ("t", "s", False)])
def test_steam_rule(failed, cand, expected):
    crit = {"s": 1, "s2": 1, "t": 0}
    assert steam_reallocate(crit, failed, cand) is expected


def test_steam_needs_entries():
    with pytest.raises(TopError):
        steam_reallocate({"s": 1}, "s", "x")


@given(st.sampled_from([0, 1]), st.sampled_from([0, 1]))
def test_steam_is_the_criticality_difference(a, b):
    assert steam_reallocate({"x": a, "y": b}, "x", "y") == (a - b > 0)


def test_belief_state_canonical_form():
    a = BeliefState.make({"q", "p"}, time=1, self=0)
    b = BeliefState.make(["p", "q"], self=0, time=1)
    assert a == b and hash(a) == hash(b)
    assert a.sort_key() == b.sort_key()
