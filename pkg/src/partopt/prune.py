"""Two-round model pruning: availability masking, then policy application.

Each round removes transitions and then discards states that are no longer
reachable from the initial state.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Mapping, Set, Tuple

from partopt.errors import InitialStateEliminated, InvalidDistribution, UnboundParameter
from partopt.model import (
    ONE,
    STUTTER,
    AvailabilityMask,
    LinExpr,
    Pmdp,
    Policy,
    reduce_groups,
)


@dataclass(frozen=True)
class PruneTrace:
    removed_states_round1: FrozenSet[str] = frozenset()
    removed_transitions_round1: int = 0
    removed_states_round2: FrozenSet[str] = frozenset()
    removed_transitions_round2: int = 0

    def merge(self, other: "PruneTrace") -> "PruneTrace":
        return PruneTrace(
            self.removed_states_round1 | other.removed_states_round1,
            self.removed_transitions_round1 + other.removed_transitions_round1,
            self.removed_states_round2 | other.removed_states_round2,
            self.removed_transitions_round2 + other.removed_transitions_round2,
        )

    def as_dict(self) -> dict:
        return {
            "removed_states_round1": sorted(self.removed_states_round1),
            "removed_transitions_round1": self.removed_transitions_round1,
            "removed_states_round2": sorted(self.removed_states_round2),
            "removed_transitions_round2": self.removed_transitions_round2,
        }


def reachable_states(m: Pmdp) -> Set[str]:
    """Forward closure from the initial state over every branch of every action."""
    seen = {m.initial}
    queue = deque([m.initial])
    while queue:
        s = queue.popleft()
        for t in m.successors(s):
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen


def _stutter_fill(m: Pmdp, transitions: Dict[Tuple[str, str], tuple], states: Iterable[str]):
    """Give every action-less state a constant-1 ``stutter`` self-loop."""
    has_action = {s for s, _ in transitions}
    actions = m.actions
    for s in states:
        if s not in has_action:
            transitions[(s, STUTTER)] = ((LinExpr.const(ONE), s),)
            if STUTTER not in actions:
                actions = actions + (STUTTER,)
    return actions


def _rebuild(m: Pmdp, keep: Set[str], transitions: Dict[Tuple[str, str], tuple]) -> Pmdp:
    states = tuple(s for s in m.states if s in keep)
    actions = _stutter_fill(m, transitions, states)
    # re-key in state order so iteration stays deterministic after stutter insertion
    ordered = {}
    by_state: Dict[str, list] = {}
    for key, branches in transitions.items():
        by_state.setdefault(key[0], []).append((key, branches))
    for s in states:
        for key, branches in by_state.get(s, ()):
            ordered[key] = branches
    return m.replace(
        states=states,
        actions=actions,
        transitions=ordered,
        rewards={s: m.reward(s) for s in states},
        labels={s: m.labels.get(s, ()) for s in states},
    )


def induced_submodel(m: Pmdp, keep: Iterable[str]) -> Pmdp:
    """Restrict ``m`` to ``keep``.

    A distribution with any branch leaving ``keep`` is dropped whole, never
    renormalised.  States left without actions get a ``stutter`` self-loop.
    """
    keep = set(keep)
    if m.initial not in keep:
        raise InitialStateEliminated(f"initial state {m.initial!r} is not kept")
    transitions = {}
    for (s, a), branches in m.transitions.items():
        if s in keep and all(t in keep for _, t in branches):
            transitions[(s, a)] = branches
    return _rebuild(m, keep, transitions)


def _restrict_reachable(m: Pmdp) -> Pmdp:
    reach = reachable_states(m)
    return m if len(reach) == len(m.states) else induced_submodel(m, reach)


def _branch_count(transitions: Mapping) -> int:
    return sum(len(b) for b in transitions.values())


def _check_initial(m: Pmdp, transitions: Mapping, why: str):
    if not any(s == m.initial for s, _ in transitions):
        raise InitialStateEliminated(f"{why} disables every action of the initial state {m.initial!r}")


def eliminate_unavailable(m: Pmdp, mask: AvailabilityMask) -> Tuple[Pmdp, PruneTrace]:
    """Round one: drop masked ``(state, action)`` entries, then unreachable states."""
    if not mask:
        out = _restrict_reachable(m)
        return out, PruneTrace(frozenset(m.states) - frozenset(out.states), m.n_branches - out.n_branches)
    transitions = {}
    for (s, a), branches in m.transitions.items():
        if a != STUTTER:
            allowed = mask.allowed_for(dict(m.labels.get(s, ())))
            if allowed is not None and a not in allowed:
                continue
        transitions[(s, a)] = branches
    _check_initial(m, transitions, "the mask")
    removed_edges = m.n_branches - _branch_count(transitions)
    masked = _rebuild(m, set(m.states), transitions)
    reach = reachable_states(masked)
    out = induced_submodel(masked, reach)
    removed_states = frozenset(m.states) - frozenset(out.states)
    removed_edges += masked.n_branches - out.n_branches
    return out, PruneTrace(removed_states, max(removed_edges, 0))


def apply_policy(m: Pmdp, pol: Policy) -> Tuple[Pmdp, PruneTrace]:
    """Round two: substitute the policy valuation and prune zero branches.

    Branches that become exactly 0 are removed, as are distributions left with
    no branch.  Parameters not assigned by the policy stay symbolic.
    """
    val = pol.valuation
    for p in m.policy_params:
        if p not in val:
            raise UnboundParameter(p)
    if not any(p in val for p in m.params):
        out = _restrict_reachable(m)
        return out, PruneTrace(
            removed_states_round2=frozenset(m.states) - frozenset(out.states),
            removed_transitions_round2=m.n_branches - out.n_branches,
        )
    cache: Dict[LinExpr, LinExpr] = {}
    transitions = {}
    for key, branches in m.transitions.items():
        kept = []
        changed = False
        for expr, t in branches:
            new = cache.get(expr)
            if new is None:
                new = cache[expr] = expr.substitute(val)
            if new.is_zero:
                changed = True
                continue
            if new is not expr:
                changed = True
            kept.append((new, t))
        if kept:
            transitions[key] = tuple(kept) if changed else branches
    for (s, a), branches in transitions.items():
        total = LinExpr()
        for expr, _ in branches:
            total = total + expr
        reduced = reduce_groups(total, m.groups)
        if not (reduced.is_constant and reduced.constant == 1):
            raise InvalidDistribution(f"({s}, {a}) sums to {total} under policy {pol.id!r}")
    _check_initial(m, transitions, f"policy {pol.id!r}")
    removed_edges = m.n_branches - _branch_count(transitions)
    applied = _rebuild(m, set(m.states), transitions)
    out = induced_submodel(applied, reachable_states(applied))
    removed_edges += applied.n_branches - out.n_branches
    removed_states = frozenset(m.states) - frozenset(out.states)
    return out, PruneTrace(removed_states_round2=removed_states, removed_transitions_round2=max(removed_edges, 0))


def prune(m: Pmdp, mask: AvailabilityMask | None = None, pol: Policy | None = None) -> Tuple[Pmdp, PruneTrace]:
    """Run both rounds in order (mask first, then policy)."""
    trace = PruneTrace()
    if mask is not None:
        m, trace = eliminate_unavailable(m, mask)
    if pol is not None:
        m, t2 = apply_policy(m, pol)
        trace = trace.merge(t2)
    return m, trace
