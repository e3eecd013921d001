"""Brute-force reference values by explicit outcome-tree enumeration.

Every complete trajectory (states, joint actions, observations) is listed with
its probability and total reward; nothing is memoized or shared with the
evaluator's recursion.  Beliefs are refolded from the raw observation tuple at
every step.
"""


def _fold(rule, agent, obs_seq):
    b = rule.initial(agent)
    for o in obs_seq:
        b = rule.update(b, o)
    return b


def trajectories(model, act):
    """All length-T trajectories as (probability, total reward, final state, histories).

    ``act(agent, obs_tuple)`` returns that agent's ActionLabel.
    """
    n = model.n_agents
    paths = [(p, 0.0, s, ((),) * n) for s, p in model.start if p > 0]
    for _ in range(model.horizon):
        nxt = []
        for p, total, s, hists in paths:
            joint = tuple(act(i, hists[i]) for i in range(n))
            r = model.reward(s, joint)
            for s2, q in model.transition(s, joint):
                if q <= 0:
                    continue
                for o, w in model.observation(s2, joint):
                    if w <= 0:
                        continue
                    nxt.append((p * q * w, total + r, s2,
                                tuple(h + (oi,) for h, oi in zip(hists, o))))
        paths = nxt
    return paths


def expected_reward(model, act) -> float:
    return sum(p * total for p, total, _, _ in trajectories(model, act))


def belief_actor(policy, rule):
    """Adapter: belief-indexed JointPolicy -> act(agent, obs_tuple)."""
    def act(i, obs_seq):
        return policy.locals[i].decision(_fold(rule, i, obs_seq)).action
    return act


def table_actor(tables):
    """Adapter: per-agent dicts obs_tuple -> ActionLabel."""
    return lambda i, obs_seq: tables[i][obs_seq]
