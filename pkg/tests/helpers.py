"""Model builders and brute-force oracles shared by the test modules."""
import random
from fractions import Fraction

import numpy as np

from partopt.model import LinExpr, ParamGroup, Pmdp


def model(transitions, states=None, initial=None, params=(), groups=(), labels=None, name="t"):
    """Build a Pmdp from ``{(s, a): [(expr_or_number_or_param, target), ...]}``."""
    trans = {}
    actions = []
    seen_states = []
    for (s, a), branches in transitions.items():
        if a not in actions:
            actions.append(a)
        if s not in seen_states:
            seen_states.append(s)
        out = []
        for e, t in branches:
            if isinstance(e, str):
                e = LinExpr.param(e)
            elif not isinstance(e, LinExpr):
                e = LinExpr.const(e)
            out.append((e, t))
            if t not in seen_states:
                seen_states.append(t)
        trans[(s, a)] = tuple(out)
    states = tuple(states or seen_states)
    return Pmdp(
        name=name,
        states=states,
        initial=initial or states[0],
        actions=tuple(actions),
        transitions=trans,
        params=tuple(params),
        groups=tuple(ParamGroup(tuple(g)) for g in groups),
        rewards={s: Fraction(0) for s in states},
        labels={s: tuple((labels or {}).get(s, ())) for s in states},
    )


def random_model(rng: random.Random, n: int, density: float, n_params: int = 0) -> Pmdp:
    """Random valid model: each state's out-edges are split over 1-2 actions.

    With ``n_params`` > 0, some two-branch distributions use a group ``(p, q)``.
    """
    states = [f"s{i}" for i in range(n)]
    params = []
    groups = []
    trans = {}
    for i, s in enumerate(states):
        targets = [t for t in states if rng.random() < density]
        if not targets:
            targets = [s]
        rng.shuffle(targets)
        cut = rng.randint(1, len(targets)) if len(targets) > 1 and rng.random() < 0.5 else len(targets)
        for a, chunk in (("a", targets[:cut]), ("b", targets[cut:])):
            if not chunk:
                continue
            if len(chunk) == 2 and len(groups) < n_params:
                p, q = f"p{len(groups)}", f"q{len(groups)}"
                params += [p, q]
                groups.append((p, q))
                trans[(s, a)] = ((LinExpr.param(p), chunk[0]), (LinExpr.param(q), chunk[1]))
            else:
                k = Fraction(1, len(chunk))
                trans[(s, a)] = tuple((LinExpr.const(k), t) for t in chunk)
    return Pmdp(
        name="rand",
        states=tuple(states),
        initial=states[0],
        actions=("a", "b"),
        transitions=trans,
        params=tuple(params),
        groups=tuple(ParamGroup(g) for g in groups),
        rewards={},
        labels={},
    )


def closure(m: Pmdp) -> np.ndarray:
    """Reflexive-transitive closure of the edge relation by repeated squaring."""
    n = len(m.states)
    idx = m.state_index
    r = np.eye(n, dtype=bool)
    for (s, _), branches in m.transitions.items():
        for _, t in branches:
            r[idx[s], idx[t]] = True
    while True:
        nxt = r | ((r.astype(np.int64) @ r.astype(np.int64)) > 0)
        if (nxt == r).all():
            return r
        r = nxt


def brute_reachable(m: Pmdp):
    r = closure(m)
    i = m.state_index[m.initial]
    return {m.states[j] for j in range(len(m.states)) if r[i, j]}


def brute_scc_partition(m: Pmdp):
    """Partition by mutual reachability (the O(n^3) definition)."""
    r = closure(m)
    mutual = r & r.T
    seen = set()
    parts = set()
    for i in range(len(m.states)):
        if i in seen:
            continue
        block = {j for j in range(len(m.states)) if mutual[i, j]}
        seen |= block
        parts.add(frozenset(m.states[j] for j in block))
    return frozenset(parts)
