"""Shared container for built domain instances."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from ..evaluator import evaluate_belief, evaluate_obs_history
from ..top import assignment_from_counts, complete_policy, derive_incomplete_policy


@dataclass
class DomainInstance:
    name: str
    params: Any
    top: Any
    model: Any
    plan: Any
    rule: Any
    incomplete: Any
    space: Any
    agent_classes: tuple = ()
    builder: Callable | None = field(default=None, repr=False)

    def assignment(self, leaf):
        return assignment_from_counts(self.top, self.agent_classes, leaf.leaf_counts(),
                                      leaf.condition_branches or None)

    def policy_for(self, leaf, incomplete=None, consulted=None):
        return complete_policy(incomplete or self.incomplete, self.assignment(leaf), consulted)

    def leaf_by_vector(self, vector):
        vector = tuple(vector)
        for leaf in self.space.leaves():
            if leaf.vector() == vector:
                return leaf
        raise KeyError(f"no allocation {vector}")

    def evaluate(self, leaf, mode="belief", model=None, rule=None):
        model = model or self.model
        rule = rule or self.rule
        policy = self.policy_for(leaf)
        if mode == "history":
            return evaluate_obs_history(model, policy.unrolled(rule))
        return evaluate_belief(model, policy, rule)

    def with_model(self, model, rule=None) -> "DomainInstance":
        """Same TOP and allocation space over a different model (e.g. failures removed)."""
        rule = rule or type(self.rule)(model)
        incomplete = derive_incomplete_policy(self.top, model, self.agent_classes,
                                              messages=self.incomplete.messages)
        from ..factoring import build_rmtdp
        plan = build_rmtdp(self.top, self.top.root, self.components_for(model))
        return DomainInstance(self.name, self.params, self.top, model, plan, rule, incomplete,
                              self.space, self.agent_classes, self.builder)

    def components_for(self, model):
        from . import component_table
        return component_table(self.name, model)

    def rebuild(self, params) -> "DomainInstance":
        if self.builder is None:
            raise ValueError(f"domain {self.name} cannot be rebuilt from parameters")
        return self.builder(params)
