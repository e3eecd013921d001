import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rmtdp.domains import MissionParams, RescueParams, build_mission_rehearsal, build_rescue_scaled  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
TOY_SPEC = ROOT / "specs" / "toy_explicit.spec"


@functools.lru_cache(maxsize=None)
def mission(n_helos, horizon, **kw):
    return build_mission_rehearsal(MissionParams(n_helos=n_helos, horizon=horizon, **kw))


@functools.lru_cache(maxsize=None)
def mission_values(n_helos, horizon):
    """Exact value of every leaf, keyed by count vector."""
    d = mission(n_helos, horizon)
    return {leaf.vector(): d.evaluate(leaf).value for leaf in d.space.leaves()}


@functools.lru_cache(maxsize=None)
def rescue(**kw):
    return build_rescue_scaled(RescueParams(**kw)) if kw else build_rescue_scaled()


@pytest.fixture
def toy_spec_path():
    return TOY_SPEC
