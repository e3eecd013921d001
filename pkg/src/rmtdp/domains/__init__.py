"""Built-in domains."""
from .base import DomainInstance
from .mission import MissionParams, build_mission_rehearsal
from .rescue import RescueParams, build_rescue_scaled


def component_table(name, model):
    if name == "mission-rehearsal":
        from .mission import mission_components
        return mission_components(model)
    if name == "rescue-scaled":
        from .rescue import rescue_components
        return rescue_components(model)
    raise ValueError(f"unknown domain {name!r}")


BUILDERS = {"mission-rehearsal": build_mission_rehearsal, "rescue-scaled": build_rescue_scaled}
PARAMS = {"mission-rehearsal": MissionParams, "rescue-scaled": RescueParams}

__all__ = ["DomainInstance", "MissionParams", "RescueParams", "build_mission_rehearsal",
           "build_rescue_scaled", "component_table", "BUILDERS", "PARAMS"]
