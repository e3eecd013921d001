import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from conftest import mission, rescue
from rmtdp.domains import MissionParams, RescueParams, build_mission_rehearsal, build_rescue_scaled
from rmtdp.model import ModelError, validate_model


def _values(domain):
    return {leaf.vector(): domain.evaluate(leaf).value for leaf in domain.space.leaves()}


# ---------------------------------------------------------------- mission

def test_mission_defaults():
    d = mission(6, 10)
    assert d.params.horizon == 10 and d.model.n_agents == 6
    assert len(d.space.leaves()) == 84


@pytest.mark.parametrize("bad", [dict(n_helos=-1), dict(fail=(0.1, 0.2)), dict(route_lengths=(0, 3, 2)),
                                 dict(observe_alive=(1.2, 0.9, 0.9)), dict(horizon=-2),
                                 dict(transport_unscouted_crash=2.0)])
def test_mission_rejects_bad_parameters(bad):
    with pytest.raises(ModelError):
        build_mission_rehearsal(MissionParams(**bad))


def test_all_transport_earns_nothing_with_certain_crash():
    vals = _values(mission(3, 10))
    assert vals[(0, 0, 0, 3)] == 0.0
    assert max(vals.values()) > 0


def test_without_failures_dominates():
    base = _values(mission(3, 10))
    safe = _values(build_mission_rehearsal(MissionParams(n_helos=3).without_failures()))
    for v, x in base.items():
        assert safe[v] >= x - 1e-9


@pytest.mark.parametrize("route", [0, 1, 2])
def test_failure_rate_never_helps_any_allocation(route):
    """Raising one route's failure rate can only lower every allocation's value."""
    grid = [0.0, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0]
    prev = None
    for p in grid:
        fail = list(MissionParams().fail)
        fail[route] = p
        vals = _values(mission(3, 10, fail=tuple(fail)))
        if prev is not None:
            for v in vals:
                assert vals[v] <= prev[v] + 1e-9, (p, v)
        prev = vals


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2), st.floats(0, 1), st.floats(0, 1))
def test_failure_monotone_under_random_increases(route, p, q):
    lo, hi = sorted((p, q))
    vals = []
    for rate in (lo, hi):
        fail = list(MissionParams().fail)
        fail[route] = rate
        vals.append(_values(mission(3, 7, fail=tuple(fail))))
    a, b = vals
    assert all(b[v] <= a[v] + 1e-9 for v in a)


def test_joint_extreme_rates_can_reward_a_later_crash():
    # with route 1 at 0.5, a route-2 scout that survives one extra cell delays the
    # team's failure handling, which costs slightly more than crashing at once
    a = _values(mission(3, 7, fail=(0.5, 0.998046875, 0.0)))
    b = _values(mission(3, 7, fail=(0.5, 1.0, 0.0)))
    assert b[(1, 1, 0, 1)] - a[(1, 1, 0, 1)] == pytest.approx(2.2534e-4, rel=1e-3)


def test_mission_rebuild_uses_new_parameters():
    d = mission(2, 5)
    d2 = d.rebuild(replace(d.params, r_transport=0.0))
    assert d2.params.r_transport == 0.0
    assert max(_values(d2).values()) <= max(_values(d).values())


# ---------------------------------------------------------------- rescue

def test_rescue_defaults():
    d = rescue()
    assert d.agent_classes == ("station1", "station2", "ambulance", "ambulance")
    assert [s for s, _ in d.model.start] and sum(p for _, p in d.model.start) == pytest.approx(1.0)
    assert d.model.without_failures() is d.model


@pytest.mark.parametrize("bad", [dict(civilians=1), dict(engines=(1, 1)), dict(ambulances=-1),
                                 dict(fire_growth=1.5), dict(extinguish=(0.5,)),
                                 dict(civilian_distribution={0: 1.0}), dict(civilian_distribution={1: 0.4}),
                                 dict(civilian_distribution="lopsided"), dict(initial_fire=(3, 1))])
def test_rescue_rejects_bad_parameters(bad):
    with pytest.raises(ModelError):
        build_rescue_scaled(RescueParams(**bad))


def test_rescue_distributions():
    assert RescueParams().distribution() == {1: 0.5, 2: 0.5}
    assert RescueParams(civilian_distribution="skewed").distribution() == {2: 0.8, 1: 0.2}
    assert RescueParams(civilians=2, civilian_distribution="skewed").distribution() == {1: 1.0}


def test_rescue_model_is_valid_and_values_finite():
    d = rescue(horizon=3)
    assert not validate_model(d.model, max_states=2_000).violations
    vals = _values(d)
    assert len(vals) == 36 and all(math.isfinite(v) for v in vals.values())


def test_rescue_saving_needs_ambulances():
    none = _values(rescue(horizon=4, ambulances=0))
    some = _values(rescue(horizon=4, ambulances=1))
    assert max(some.values()) > max(none.values())
