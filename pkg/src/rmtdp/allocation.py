"""Hierarchical role-allocation spaces built from an organization hierarchy."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .top import OrgNode


def count_allocations(m: int, n: int) -> int:
    """Ways to place n homogeneous agents into m role types: the rising factorial [m]^n / n!."""
    if m < 1 or n < 0:
        raise ValueError("need m >= 1 and n >= 0")
    num = 1
    for k in range(n):
        num *= m + k
    return num // math.factorial(n)


def compositions(n: int, k: int):
    """All k-tuples of non-negative ints summing to n, in lexicographic order."""
    if k == 0:
        if n == 0:
            yield ()
        return
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in compositions(n - first, k - 1):
            yield (first,) + rest


@dataclass
class AllocationNode:
    """A (partial) allocation: agent counts fixed for some organization nodes.

    ``counts`` maps organization node names to totals; ``condition_branches``
    maps a message value to the counts of message-conditioned teams.
    """

    level: int
    counts: dict
    condition_branches: dict = field(default_factory=dict)
    children: list = field(default_factory=list)
    parent: "AllocationNode | None" = field(default=None, repr=False, compare=False)
    leaf_names: tuple = field(default=(), repr=False)
    # per org node: tuple of (class, count) pairs, used while refining
    detail: dict = field(default_factory=dict, repr=False, compare=False)
    branch_detail: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list:
        if self.is_leaf:
            return [self]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaf_counts(self) -> dict:
        """Unconditioned leaf-team counts (leaf nodes only)."""
        return {n: self.counts[n] for n in self.leaf_names if n in self.counts}

    def vector(self) -> tuple:
        """Counts of unconditioned leaf teams in organization order, then each message branch."""
        if not self.is_leaf:
            return tuple(self.counts.values())
        vec = [self.counts[n] for n in self.leaf_names if n in self.counts]
        for msg in sorted(self.condition_branches, key=_msg_key):
            branch = self.condition_branches[msg]
            vec.extend(branch.get(n, 0) for n in self.leaf_names if n in branch)
        return tuple(vec)

    def label(self) -> str:
        fixed = ",".join(f"{k}={v}" for k, v in self.counts.items())
        if self.condition_branches:
            br = ";".join(f"{m}:" + ",".join(f"{k}={v}" for k, v in b.items())
                          for m, b in sorted(self.condition_branches.items(), key=lambda kv: _msg_key(kv[0])))
            fixed += " | " + br
        return fixed or "root"

    def parents(self) -> list:
        """Nodes whose children are all leaves (the level bounds are computed at)."""
        if self.is_leaf:
            return []
        if all(c.is_leaf for c in self.children):
            return [self]
        out = []
        for c in self.children:
            out.extend(c.parents())
        return out


def _msg_key(m):
    return (str(type(m)), m)


def _classes_under(node: OrgNode) -> set:
    return {leaf.agent_class for leaf in node.leaves()}


def _split(counts: dict, node: OrgNode):
    """Every way to distribute a node's per-class counts among its children."""
    per_class = []
    for cls, n in counts:
        targets = [c for c in node.children if cls in _classes_under(c)]
        if not targets:
            if n:
                raise ValueError(f"no team under {node.name} accepts class {cls!r}")
            continue
        per_class.append([(cls, targets, comp) for comp in compositions(n, len(targets))])
    for combo in itertools.product(*per_class):
        out = {c.name: {} for c in node.children}
        for cls, targets, comp in combo:
            for child, k in zip(targets, comp):
                if k:
                    out[child.name][cls] = out[child.name].get(cls, 0) + k
        yield {name: tuple(sorted(v.items())) for name, v in out.items()}


def _total(detail) -> int:
    return sum(k for _, k in detail)


def build_allocation_space(org: OrgNode, agents, messages=None) -> AllocationNode:
    """Allocation tree refining one organization node per level (breadth-first order, conditioned teams last).

    ``agents`` is a count (single class) or a mapping class -> count.
    Teams whose leaves carry a message tag are split once per value in
    ``messages`` (a mapping tag -> values, or a plain sequence for one tag).
    Levels where no node has a choice are merged away.
    """
    if isinstance(agents, int):
        classes = {leaf.agent_class for leaf in org.leaves()}
        if len(classes) != 1:
            raise ValueError("heterogeneous organization needs per-class agent counts")
        agents = {classes.pop(): agents}
    if any(v < 0 for v in agents.values()):
        raise ValueError("agent counts must be non-negative")
    if messages is not None and not isinstance(messages, dict):
        tags = {leaf.message for leaf in org.leaves() if leaf.message}
        messages = {t: tuple(messages) for t in tags}
    messages = messages or {}
    leaf_names = tuple(leaf.name for leaf in org.leaves())

    # message-conditioned teams are refined after every unconditioned level
    inner = [n for n in _bfs(org) if not n.is_leaf]
    order = ([n for n in inner if not any(c.is_leaf and c.message for c in n.children)]
             + [n for n in inner if any(c.is_leaf and c.message for c in n.children)])
    root = AllocationNode(0, {}, leaf_names=leaf_names,
                          detail={org.name: tuple(sorted(agents.items()))})
    frontier = [root]
    level = 0
    for node in order:
        conditioned = any(c.is_leaf and c.message for c in node.children)
        if conditioned and any(not c.is_leaf for c in node.children):
            raise ValueError(f"message-conditioned team {node.name} must have leaf children only")
        tag = next((c.message for c in node.children if c.message), None)
        new_frontier = []
        branching = False
        for partial in frontier:
            own = partial.detail.get(node.name, ())
            if conditioned:
                values = messages.get(tag, ())
                per_msg = [list(_split(own, node)) for _ in values]
                options = [dict(zip(values, combo)) for combo in itertools.product(*per_msg)]
            else:
                options = list(_split(own, node))
            branching |= len(options) > 1
            kids = []
            for opt in options:
                child = AllocationNode(level + 1, dict(partial.counts),
                                       {m: dict(b) for m, b in partial.condition_branches.items()},
                                       leaf_names=leaf_names,
                                       detail=dict(partial.detail),
                                       branch_detail=dict(partial.branch_detail))
                if conditioned:
                    for m, split in opt.items():
                        branch = child.condition_branches.setdefault(m, {})
                        for name, det in split.items():
                            branch[name] = _total(det)
                else:
                    for name, det in opt.items():
                        child.detail[name] = det
                        child.counts[name] = _total(det)
                kids.append((partial, child))
            new_frontier.extend(kids)
        if branching:
            level += 1
            for partial, child in new_frontier:
                child.parent = partial
                partial.children.append(child)
            frontier = [c for _, c in new_frontier]
        else:
            # no choice at this level: fold the forced refinement into the existing nodes
            for partial, child in new_frontier:
                partial.counts = child.counts
                partial.condition_branches = child.condition_branches
                partial.detail = child.detail
            frontier = [p for p, _ in new_frontier]
    for leaf in root.leaves():
        leaf.counts = {n: leaf.counts.get(n, 0) for n in leaf_names
                       if not any(n in b for b in leaf.condition_branches.values())}
        for m, b in leaf.condition_branches.items():
            leaf.condition_branches[m] = {n: b.get(n, 0) for n in leaf_names if n in b}
    return root


def _bfs(org: OrgNode):
    queue = [org]
    while queue:
        n = queue.pop(0)
        yield n
        queue.extend(n.children)


def leaf_count_formula_rescue(engines, ambulances: int, civilians: int) -> int:
    """Leaf count when every message value 0..civilians conditions the ambulance split."""
    out = 1
    for f in engines:
        out *= f + 1
    return out * (ambulances + 1) ** (civilians + 1)
