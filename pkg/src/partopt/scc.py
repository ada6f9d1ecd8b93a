"""Strongly connected component decomposition of a model's transition graph."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

from partopt.model import Pmdp


@dataclass(frozen=True)
class Component:
    id: int
    states: Tuple[str, ...]
    params: FrozenSet[str]

    @property
    def size(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class ComponentSet:
    components: Tuple[Component, ...]
    state_to_component: Dict[str, int]

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def partition(self) -> FrozenSet[FrozenSet[str]]:
        return frozenset(frozenset(c.states) for c in self.components)


@dataclass(frozen=True)
class SizeHistogram:
    counts: Dict[int, int]

    @property
    def max(self) -> int:
        return max((i for i, c in self.counts.items() if c > 0), default=0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def singletons(self) -> int:
        return self.counts.get(1, 0)

    def items(self) -> List[Tuple[int, int]]:
        return sorted((i, c) for i, c in self.counts.items() if c > 0)

    def __str__(self):
        return " ".join(f"{i}:{c}" for i, c in self.items())


def tarjan(n: int, adj: Sequence[Sequence[int]]) -> List[List[int]]:
    """Iterative Tarjan over vertices ``0..n-1``.

    Components come out in reverse topological order of the condensation:
    every component is emitted after all components it can reach.
    """
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: List[int] = []
    out: List[List[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, i = work[-1]
            succ = adj[v]
            if i < len(succ):
                work[-1] = (v, i + 1)
                w = succ[i]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            work.pop()
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comp.sort()
                out.append(comp)
    return out


def adjacency(m: Pmdp) -> List[List[int]]:
    """Integer successor lists; any branch is an edge, whatever its expression."""
    idx = m.state_index
    return [[idx[t] for t in m.successors(s)] for s in m.states]


def component_params(m: Pmdp, c: Component | Iterable[str]) -> FrozenSet[str]:
    """Parameters on any branch whose source lies in ``c`` (internal or exiting)."""
    states = c.states if isinstance(c, Component) else c
    params = set()
    for s in states:
        for a in m.actions_by_state.get(s, ()):
            for expr, _ in m.transitions[(s, a)]:
                for name, _ in expr.terms:
                    params.add(name)
    return frozenset(params)


def decompose(m: Pmdp) -> ComponentSet:
    sccs = tarjan(len(m.states), adjacency(m))
    components = []
    owner: Dict[str, int] = {}
    for cid, members in enumerate(sccs):
        states = tuple(m.states[i] for i in members)
        components.append(Component(cid, states, component_params(m, states)))
        for s in states:
            owner[s] = cid
    return ComponentSet(tuple(components), owner)


def size_histogram(cs: ComponentSet | Iterable[int]) -> SizeHistogram:
    """Histogram of component sizes; accepts a ComponentSet or raw sizes."""
    if isinstance(cs, ComponentSet):
        sizes = [c.size for c in cs.components]
    else:
        sizes = list(cs)
    return SizeHistogram(dict(sorted(Counter(sizes).items())))


def condensation_dot(m: Pmdp, cs: ComponentSet) -> str:
    lines = ["digraph condensation {"]
    for c in cs.components:
        label = f"C{c.id} |{c.size}|"
        if c.params:
            label += "\\n" + ",".join(sorted(c.params))
        lines.append(f'  c{c.id} [label="{label}"];')
    edges = set()
    for s in m.states:
        src = cs.state_to_component[s]
        for t in m.successors(s):
            dst = cs.state_to_component[t]
            if src != dst:
                edges.add((src, dst))
    for src, dst in sorted(edges):
        lines.append(f"  c{src} -> c{dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"
