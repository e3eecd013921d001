import dataclasses

import pytest

from conftest import mission, mission_values, rescue
from rmtdp.domains import MissionParams, build_mission_rehearsal
from rmtdp.search import (MAXEXP, NOFAIL, NOPRUNE, SearchError, bound_for, branch_and_bound, maxexp_bound,
                          nofail_bound, noprune, parent_groups)


def _exact_max(values, leaves):
    return max(values[leaf.vector()] for leaf in leaves)


@pytest.mark.parametrize("n,horizon", [(3, 6), (4, 6)])
def test_bounds_are_admissible_and_ordered(n, horizon):
    d = mission(n, horizon)
    vals = mission_values(n, horizon)
    for node, leaves in parent_groups(d.space):
        mx = maxexp_bound(node, d, leaves).max_estimate
        nf = nofail_bound(node, d, leaves).max_estimate
        assert mx >= _exact_max(vals, leaves) - 1e-9
        assert nf >= mx - 1e-9


def test_bound_record_components_sum():
    d = mission(3, 6)
    node, leaves = parent_groups(d.space)[1]
    rec = bound_for(MAXEXP, node, d, leaves)
    assert rec.component_ids == ["DoScouting", "DoTransport", "RemainingScouts"]
    assert rec.max_estimate == pytest.approx(sum(rec.component_maxima))
    assert rec.bound_kind == MAXEXP


@pytest.mark.parametrize("n", [2, 3, 4])
def test_branch_and_bound_matches_exhaustive(n):
    d = mission(n, 7)
    ref = noprune(d)
    for kind in (MAXEXP, NOFAIL):
        got = branch_and_bound(d, kind)
        assert got.best_value == pytest.approx(ref.best_value, abs=1e-9)
        assert got.best_vector == ref.best_vector
        assert got.stats.leaf_evaluations <= ref.stats.leaf_evaluations
        assert got.stats.leaf_evaluations + got.stats.pruned_parents >= 1


def test_exhaustive_visits_every_leaf():
    d = mission(3, 6)
    res = branch_and_bound(d, NOPRUNE)
    assert res.bound_kind == NOPRUNE
    assert res.stats.leaf_evaluations == 20 and res.stats.parent_bound_evaluations == 0
    assert res.best_value == max(mission_values(3, 6).values())


def test_ties_go_to_smallest_vector():
    d = mission(3, 4)  # every allocation is worth at most 0 here
    vals = mission_values(3, 4)
    top = max(vals.values())
    expect = min(v for v, x in vals.items() if x == top)
    for kind in (MAXEXP, NOFAIL, NOPRUNE):
        assert branch_and_bound(d, kind).best_vector == expect


def test_result_does_not_depend_on_workers():
    d = mission(4, 7)
    one = branch_and_bound(d, MAXEXP, workers=1)
    four = branch_and_bound(d, MAXEXP, workers=4)
    assert one.best_vector == four.best_vector and one.best_value == four.best_value
    assert one.stats.leaf_evaluations == four.stats.leaf_evaluations
    assert [b.max_estimate for b in one.bounds] == [b.max_estimate for b in four.bounds]


def test_history_mode_exhaustive_agrees():
    d = mission(3, 6)
    a, b = noprune(d), noprune(d, mode="history")
    assert a.best_vector == b.best_vector
    assert a.best_value == pytest.approx(b.best_value, abs=1e-9)
    for x, y in zip(a.leaves, b.leaves):
        assert x.node_expansions <= y.node_expansions


def test_nofail_equals_maxexp_without_failures():
    d = build_mission_rehearsal(MissionParams(n_helos=3, horizon=6).without_failures())
    for node, leaves in parent_groups(d.space):
        assert nofail_bound(node, d, leaves).max_estimate == pytest.approx(
            maxexp_bound(node, d, leaves).max_estimate, abs=1e-9)


def test_nofail_needs_failure_monotone_domain():
    d = mission(2, 3)
    odd = dataclasses.replace(d, model=object())  # a model that does not declare monotone failures
    with pytest.raises(SearchError):
        nofail_bound(parent_groups(d.space)[0][0], odd)


def test_unknown_bound_kind():
    d = mission(2, 3)
    with pytest.raises(SearchError):
        branch_and_bound(d, "GUESS")
    with pytest.raises(SearchError):
        bound_for("GUESS", d.space, d)


def test_rescue_search_matches_exhaustive_and_bounds_hold():
    d = rescue(horizon=4)
    ref = noprune(d)
    vals = {r.leaf.vector(): r.value for r in ref.leaves}
    for kind in (MAXEXP, NOFAIL):
        got = branch_and_bound(d, kind)
        assert got.best_value == pytest.approx(ref.best_value, abs=1e-9)
        assert got.best_vector == ref.best_vector
        for rec, (node, leaves) in zip(sorted(got.bounds, key=lambda b: id(b.parent)),
                                       sorted(parent_groups(d.space), key=lambda g: id(g[0]))):
            assert rec.parent is node
            assert rec.max_estimate >= _exact_max(vals, leaves) - 1e-9


def test_parent_groups_cover_all_leaves_once():
    d = mission(4, 2)
    seen = [leaf.vector() for _, leaves in parent_groups(d.space) for leaf in leaves]
    assert sorted(seen) == sorted(leaf.vector() for leaf in d.space.leaves())


def test_single_leaf_space():
    d = mission(0, 4)
    res = branch_and_bound(d, MAXEXP)
    assert res.best_vector == (0, 0, 0, 0) and res.best_value == 0.0
