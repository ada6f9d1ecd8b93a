"""Partition quality metrics.

``balancing`` rewards few single-state components and uniform sizes (best
value 1, worst +inf).  ``variation`` measures how widely the parameters are
spread over components (0 best, 1 worst).  ``score`` adds them with the
variation scaled by 10; lower is better.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Set

from partopt.errors import EmptyPartition, UnboundParameter
from partopt.scc import ComponentSet, SizeHistogram

INF = math.inf
VARIATION_SCALE = 10.0


@dataclass(frozen=True)
class MetricValue:
    balancing: float
    variation: float

    @property
    def score(self) -> float:
        return score(self.balancing, self.variation)


def balancing(h: SizeHistogram) -> float:
    """Total component count over the size-weighted count of multi-state components.

    A component of size ``i`` weighs ``1 / (max - i + 1)``, so the largest
    components weigh 1 and singletons are left out of the denominator
    entirely.  All-singleton partitions have an empty denominator and score
    +inf.
    """
    if h.total == 0:
        raise EmptyPartition("balancing of an empty partition")
    largest = h.max
    denom = Fraction(0)
    for size, count in h.items():
        if size >= 2:
            denom += Fraction(count, largest - size + 1)
    if denom == 0:
        return INF
    return float(h.total / denom)


def variation(cs: ComponentSet, theta: Mapping[str, float], all_params: Iterable[str]) -> float:
    """Parameter spread over components, in [0, 1].

    Each component contributes the summed valuation of the parameters it
    carries; the total is normalised by (summed valuation of every parameter)
    times (number of components).
    """
    if len(cs) == 0:
        raise EmptyPartition("variation of an empty partition")
    all_params = list(all_params)
    for p in all_params:
        if p not in theta:
            raise UnboundParameter(p)
    weight = {p: Fraction(theta[p]) for p in all_params}
    total = sum(weight.values(), Fraction(0))
    if total == 0:
        return 0.0
    numer = Fraction(0)
    for c in cs.components:
        for p in c.params:
            numer += weight.get(p, 0)
    return float(numer / (total * len(cs)))


def score(bal: float, var: float) -> float:
    if math.isinf(bal):
        return INF
    return bal + VARIATION_SCALE * var


def affected_components(cs: ComponentSet, changed: Iterable[str]) -> Set[int]:
    """Ids of components whose parameter set intersects ``changed``."""
    changed = set(changed)
    return {c.id for c in cs.components if c.params & changed}
