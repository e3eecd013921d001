import itertools
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from conftest import mission, rescue
from rmtdp.allocation import (build_allocation_space, compositions, count_allocations,
                              leaf_count_formula_rescue)
from rmtdp.domains import build_rescue_scaled
from rmtdp.top import OrgNode


def brute_vectors(n, teams):
    """Every multiset of team choices for n identical agents, as per-team counts."""
    out = set()
    for picks in itertools.combinations_with_replacement(range(teams), n):
        c = Counter(picks)
        out.add(tuple(c[k] for k in range(teams)))
    return out


def test_known_counts():
    assert count_allocations(4, 6) == 84
    assert count_allocations(4, 3) == 20
    assert count_allocations(1, 5) == 1
    assert count_allocations(3, 0) == 1


@given(st.integers(1, 6), st.integers(0, 7))
def test_count_matches_multiset_enumeration(m, n):
    assert count_allocations(m, n) == len(brute_vectors(n, m))


def test_count_rejects_bad_input():
    with pytest.raises(ValueError):
        count_allocations(0, 3)
    with pytest.raises(ValueError):
        count_allocations(2, -1)


@given(st.integers(0, 6), st.integers(1, 4))
def test_compositions_are_lexicographic_and_complete(n, k):
    comps = list(compositions(n, k))
    assert comps == sorted(comps)
    assert set(comps) == brute_vectors(n, k)


@pytest.mark.parametrize("n", range(0, 7))
def test_mission_space_enumerates_every_allocation_once(n):
    space = mission(n, 2).space
    vecs = [leaf.vector() for leaf in space.leaves()]
    assert len(vecs) == len(set(vecs)) == count_allocations(4, n)
    assert set(vecs) == brute_vectors(n, 4)


def test_mission_parents_are_scouting_splits():
    space = mission(3, 2).space
    parents = space.parents()
    # the first level decides how many go scouting
    assert [p.counts["ScoutingTeam"] for p in parents] == [0, 1, 2, 3]
    for p in parents:
        assert all(c.is_leaf for c in p.children)
        for leaf in p.children:
            assert sum(leaf.vector()[:3]) == p.counts["ScoutingTeam"]


def test_rescue_space_against_formula_and_enumeration():
    d = build_rescue_scaled(message_values=range(0, 4))
    leaves = d.space.leaves()
    assert len(leaves) == leaf_count_formula_rescue((1, 1, 0), 2, 3) == 324
    assert len({leaf.vector() for leaf in leaves}) == 324
    # the same count by independent enumeration: engines per station, ambulances per message
    engine_ways = 1
    for f in (1, 1, 0):
        engine_ways *= len(brute_vectors(f, 2))
    assert engine_ways * len(brute_vectors(2, 2)) ** 4 == 324


def test_rescue_default_space_refines_messages_last():
    d = rescue()
    leaves = d.space.leaves()
    assert len(leaves) == 2 * 2 * 1 * 3 ** 2
    for p in d.space.parents():
        # siblings differ only in their message branches
        assert len({tuple(c.counts.items()) for c in p.children}) == 1


def _org(shape, counter):
    """Org tree from nested lists; ints are leaves."""
    if isinstance(shape, int):
        counter[0] += 1
        k = counter[0]
        return OrgNode(f"L{k}", role=f"r{k}", join=f"j{k}", agent_class="a")
    node = OrgNode(f"N{counter[0]}_{len(shape)}_{id(shape)}", [_org(s, counter) for s in shape])
    for c in node.children:
        c.parent = node
    return node


shapes = st.recursive(st.just(0), lambda kids: st.lists(kids, min_size=1, max_size=3), max_leaves=5)


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 4))
def test_random_orgs_enumerate_all_leaf_allocations(shape, n):
    if isinstance(shape, int):
        shape = [shape]
    org = _org(shape, [0])
    space = build_allocation_space(org, n)
    vecs = [leaf.vector() for leaf in space.leaves()]
    teams = len(org.leaves())
    assert len(vecs) == len(set(vecs)) == count_allocations(teams, n)
    assert set(vecs) == brute_vectors(n, teams)
    # refinement levels grow by one along every path
    for node in space.walk():
        for c in node.children:
            assert c.level == node.level + 1


def test_space_rejects_bad_counts():
    org = _org([0, 0], [0])
    with pytest.raises(ValueError):
        build_allocation_space(org, -1)
    mixed = OrgNode("R", [OrgNode("A", role="a", agent_class="x"), OrgNode("B", role="b", agent_class="y")])
    with pytest.raises(ValueError, match="per-class"):
        build_allocation_space(mixed, 2)
