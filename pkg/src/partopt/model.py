"""Parametric MDP data types: linear expressions, valuations, models, policies.

All probabilities are exact :class:`fractions.Fraction` values.  Every type in
this module is immutable after construction.
"""
from __future__ import annotations

import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

from partopt.errors import ModelError, UnboundParameter, UnknownState

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*\Z")

STUTTER = "stutter"

Number = Union[int, str, Fraction]

ZERO = Fraction(0)
ONE = Fraction(1)


def to_fraction(x) -> Fraction:
    """Convert ints, decimal/rational strings or fractions to an exact Fraction.

    Floats are converted through their shortest decimal repr, so ``0.1``
    becomes ``1/10`` rather than the binary approximation.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def is_ident(name: str) -> bool:
    return isinstance(name, str) and IDENT_RE.match(name) is not None


@dataclass(frozen=True)
class LinExpr:
    """``constant + sum(coeff * param)`` with exact rational coefficients.

    Terms are kept sorted by parameter name and zero coefficients are
    dropped, so structurally equal expressions compare and hash equal.
    """

    constant: Fraction = ZERO
    terms: Tuple[Tuple[str, Fraction], ...] = ()

    @classmethod
    def make(cls, constant: Number = 0, terms: Mapping[str, Number] | Iterable = ()) -> "LinExpr":
        acc: Dict[str, Fraction] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for name, coeff in items:
            acc[name] = acc.get(name, ZERO) + to_fraction(coeff)
        return cls(to_fraction(constant), tuple(sorted((k, v) for k, v in acc.items() if v != 0)))

    @classmethod
    def const(cls, value: Number) -> "LinExpr":
        return cls(to_fraction(value))

    @classmethod
    def param(cls, name: str, coeff: Number = 1) -> "LinExpr":
        return cls.make(0, {name: coeff})

    @property
    def is_constant(self) -> bool:
        return not self.terms

    @property
    def is_zero(self) -> bool:
        return not self.terms and self.constant == 0

    @property
    def params(self) -> FrozenSet[str]:
        return frozenset(name for name, _ in self.terms)

    def coeff(self, name: str) -> Fraction:
        for n, c in self.terms:
            if n == name:
                return c
        return ZERO

    def __add__(self, other: "LinExpr") -> "LinExpr":
        if not isinstance(other, LinExpr):
            other = LinExpr.const(other)
        return LinExpr.make(self.constant + other.constant, list(self.terms) + list(other.terms))

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return LinExpr(-self.constant, tuple((n, -c) for n, c in self.terms))

    def __sub__(self, other: "LinExpr") -> "LinExpr":
        if not isinstance(other, LinExpr):
            other = LinExpr.const(other)
        return self + (-other)

    def __rsub__(self, other) -> "LinExpr":
        return LinExpr.const(other) + (-self)

    def scale(self, k: Number) -> "LinExpr":
        k = to_fraction(k)
        return LinExpr.make(self.constant * k, [(n, c * k) for n, c in self.terms])

    def evaluate(self, valuation: Mapping[str, Fraction]) -> Fraction:
        total = self.constant
        for name, coeff in self.terms:
            try:
                total += coeff * valuation[name]
            except KeyError:
                raise UnboundParameter(name) from None
        return total

    def substitute(self, partial: Mapping[str, Fraction]) -> "LinExpr":
        if not any(name in partial for name, _ in self.terms):
            return self
        constant = self.constant
        rest = []
        for name, coeff in self.terms:
            if name in partial:
                constant += coeff * partial[name]
            else:
                rest.append((name, coeff))
        return LinExpr(constant, tuple(rest))

    def __str__(self) -> str:
        from partopt.fmt import format_expr

        return format_expr(self)


def eval_expr(e: LinExpr, v: Mapping[str, Fraction]) -> Fraction:
    """Evaluate ``e`` under ``v``; raises :class:`UnboundParameter` on a gap."""
    return e.evaluate(v)


def substitute(e: LinExpr, partial: Mapping[str, Fraction]) -> LinExpr:
    """Fold every parameter assigned in ``partial`` into the constant."""
    return e.substitute(partial)


@dataclass(frozen=True)
class ParamGroup:
    """Parameters whose values must sum to exactly 1."""

    members: Tuple[str, ...]

    def __post_init__(self):
        if len(self.members) < 2:
            raise ModelError(f"a parameter group needs at least 2 members, got {self.members}")
        if len(set(self.members)) != len(self.members):
            raise ModelError(f"duplicate member in group {self.members}")

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, name) -> bool:
        return name in self.members


def group_violations(assignment: Mapping[str, Fraction], groups: Iterable[ParamGroup]) -> List[str]:
    """Messages for every group fully covered by ``assignment`` whose sum is not 1."""
    problems = []
    for g in groups:
        if all(m in assignment for m in g.members):
            total = sum((assignment[m] for m in g.members), ZERO)
            if total != 1:
                problems.append(f"group ({', '.join(g.members)}) sums to {total}, not 1")
    return problems


class Valuation(Mapping):
    """Immutable assignment of parameters to exact values in [0, 1].

    When ``groups`` is given, every group fully covered by the assignment must
    sum to 1; a ``ValueError`` is raised otherwise.
    """

    __slots__ = ("_data",)

    def __init__(self, assignment: Mapping[str, Number] | Iterable = (), groups: Iterable[ParamGroup] = ()):
        items = assignment.items() if isinstance(assignment, Mapping) else assignment
        data = {}
        for name, value in items:
            value = to_fraction(value)
            if not 0 <= value <= 1:
                raise ValueError(f"value {value} for {name!r} is outside [0, 1]")
            data[name] = value
        problems = group_violations(data, groups)
        if problems:
            raise ValueError("; ".join(problems))
        self._data = data

    def __getitem__(self, key):
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in self._data.items())
        return f"Valuation({inner})"

    def __hash__(self):
        return hash(frozenset(self._data.items()))

    def union(self, other: Mapping[str, Fraction]) -> "Valuation":
        """Merge two valuations; values from ``self`` win on overlap."""
        merged = dict(other)
        merged.update(self._data)
        return Valuation(merged)


Branch = Tuple[LinExpr, str]


@dataclass(frozen=True)
class MaskRule:
    """Allow only ``allowed`` in states whose labels satisfy every ``key=value`` test."""

    predicate: Tuple[Tuple[str, str], ...]
    allowed: FrozenSet[str]

    def matches(self, labels: Mapping[str, str]) -> bool:
        return all(labels.get(k) == v for k, v in self.predicate)


@dataclass(frozen=True)
class AvailabilityMask:
    """Per-state action availability expressed as label-predicate rules.

    A state matched by no rule keeps every action.  A state matched by several
    rules keeps only the intersection of their allowed sets.  The reserved
    ``stutter`` action is never masked.
    """

    rules: Tuple[MaskRule, ...] = ()
    id: str = ""

    def allowed_for(self, labels: Mapping[str, str]) -> Optional[FrozenSet[str]]:
        allowed = None
        for rule in self.rules:
            if rule.matches(labels):
                allowed = rule.allowed if allowed is None else allowed & rule.allowed
        return allowed

    def combine(self, other: Optional["AvailabilityMask"]) -> "AvailabilityMask":
        if other is None or not other.rules:
            return self
        return AvailabilityMask(self.rules + other.rules, self.id or other.id)

    def unknown_actions(self, model: "Pmdp") -> List[str]:
        known = set(model.actions)
        seen = []
        for rule in self.rules:
            for a in sorted(rule.allowed):
                if a not in known and a not in seen:
                    seen.append(a)
        return seen

    def __bool__(self):
        return bool(self.rules)


@dataclass(frozen=True)
class Policy:
    """A candidate policy: a valuation of policy parameters plus an optional mask."""

    id: str
    valuation: Valuation
    mask: Optional[AvailabilityMask] = None


@dataclass(frozen=True, eq=True)
class Pmdp:
    """A parametric MDP.

    ``transitions`` maps ``(state, action)`` to its branch list, each branch a
    ``(LinExpr, target)`` pair.  Insertion order of every mapping is part of
    the model identity and drives deterministic iteration everywhere else.
    """

    name: str
    states: Tuple[str, ...]
    initial: str
    actions: Tuple[str, ...]
    transitions: Mapping[Tuple[str, str], Tuple[Branch, ...]]
    params: Tuple[str, ...] = ()
    groups: Tuple[ParamGroup, ...] = ()
    rewards: Mapping[str, Fraction] = field(default_factory=dict)
    labels: Mapping[str, Tuple[Tuple[str, str], ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state declaration")
        # total over states so that equality does not depend on omitted defaults
        rewards, labels = self.rewards, self.labels
        object.__setattr__(self, "rewards", {s: to_fraction(rewards.get(s, ZERO)) for s in self.states})
        object.__setattr__(self, "labels", {s: tuple(labels.get(s, ())) for s in self.states})
        if len(set(self.actions)) != len(self.actions):
            raise ModelError("duplicate action declaration")
        if len(set(self.params)) != len(self.params):
            raise ModelError("duplicate parameter declaration")
        seen: Dict[str, int] = {}
        declared = set(self.params)
        for gi, g in enumerate(self.groups):
            for m in g.members:
                if m not in declared:
                    raise ModelError(f"group member {m!r} is not a declared parameter")
                if m in seen:
                    raise ModelError(f"parameter {m!r} belongs to two groups")
                seen[m] = gi
        actions = set(self.actions)
        for (s, a), branches in self.transitions.items():
            if a not in actions:
                raise ModelError(f"transition ({s}, {a}) uses undeclared action {a!r}")
            if not branches:
                raise ModelError(f"transition ({s}, {a}) has no branches")
            targets = set()
            for expr, t in branches:
                if expr.is_zero:
                    raise ModelError(f"transition ({s}, {a}) has a branch that is identically 0")
                if t in targets:
                    raise ModelError(f"transition ({s}, {a}) has duplicate target {t!r}")
                targets.add(t)

    @cached_property
    def state_index(self) -> Dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def group_of(self) -> Dict[str, ParamGroup]:
        return {m: g for g in self.groups for m in g.members}

    @cached_property
    def policy_params(self) -> Tuple[str, ...]:
        """Grouped parameters, i.e. the ones a policy valuation assigns."""
        return tuple(p for p in self.params if p in self.group_of)

    @cached_property
    def env_params(self) -> Tuple[str, ...]:
        """Ungrouped parameters, which stay symbolic under a policy."""
        return tuple(p for p in self.params if p not in self.group_of)

    @cached_property
    def actions_by_state(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {s: [] for s in self.states}
        for s, a in self.transitions:
            out.setdefault(s, []).append(a)
        return out

    def label_map(self, s: str) -> Dict[str, str]:
        return dict(self.labels.get(s, ()))

    def reward(self, s: str) -> Fraction:
        return self.rewards.get(s, ZERO)

    def successors(self, s: str) -> List[str]:
        out = []
        seen = set()
        for a in self.actions_by_state.get(s, ()):
            for _, t in self.transitions[(s, a)]:
                if t not in seen:
                    seen.add(t)
                    out.append(t)
        return out

    @property
    def n_branches(self) -> int:
        return sum(len(b) for b in self.transitions.values())

    def replace(self, **changes) -> "Pmdp":
        fields = dict(
            name=self.name,
            states=self.states,
            initial=self.initial,
            actions=self.actions,
            transitions=self.transitions,
            params=self.params,
            groups=self.groups,
            rewards=self.rewards,
            labels=self.labels,
        )
        fields.update(changes)
        return Pmdp(**fields)


def enabled_actions(m: Pmdp, s: str) -> FrozenSet[str]:
    if s not in m.state_index:
        raise UnknownState(s)
    return frozenset(m.actions_by_state.get(s, ()))


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    state: Optional[str] = None
    action: Optional[str] = None

    def __str__(self):
        where = ""
        if self.state is not None:
            where = f"({self.state}, {self.action}) " if self.action is not None else f"{self.state}: "
        return f"{self.kind}: {where}{self.message}"


def reduce_groups(expr: LinExpr, groups: Iterable[ParamGroup]) -> LinExpr:
    """Replace every complete group occurring with a uniform coefficient ``k`` by ``k``."""
    terms = dict(expr.terms)
    constant = expr.constant
    for g in groups:
        if not all(m in terms for m in g.members):
            continue
        k = terms[g.members[0]]
        if all(terms[m] == k for m in g.members):
            constant += k
            for m in g.members:
                del terms[m]
    return LinExpr.make(constant, terms)


def expr_bounds(expr: LinExpr, group_of: Mapping[str, ParamGroup]) -> Tuple[Fraction, Fraction]:
    """Exact min/max of ``expr`` over all group-respecting valuations.

    Each group ranges over its probability simplex, so a group contributes the
    min/max of its members' coefficients (absent members count as 0).
    Ungrouped parameters range independently over [0, 1].
    """
    lo = hi = expr.constant
    per_group: Dict[ParamGroup, Dict[str, Fraction]] = {}
    for name, coeff in expr.terms:
        g = group_of.get(name)
        if g is None:
            lo += min(ZERO, coeff)
            hi += max(ZERO, coeff)
        else:
            per_group.setdefault(g, {})[name] = coeff
    for g, coeffs in per_group.items():
        values = [coeffs.get(m, ZERO) for m in g.members]
        lo += min(values)
        hi += max(values)
    return lo, hi


def validate_model(m: Pmdp) -> List[Violation]:
    """Return every well-formedness violation of ``m`` (empty list = valid)."""
    out: List[Violation] = []
    index = m.state_index
    declared = set(m.params)
    if m.initial not in index:
        out.append(Violation("initial", f"initial state {m.initial!r} is not declared"))
    for (s, a), branches in m.transitions.items():
        if s not in index:
            out.append(Violation("dangling", f"source state {s!r} is not declared", s, a))
        total = LinExpr()
        for expr, t in branches:
            if t not in index:
                out.append(Violation("dangling", f"target {t!r} is not declared", s, a))
            unknown = sorted(expr.params - declared)
            if unknown:
                out.append(Violation("unknown-param", f"undeclared parameter(s) {', '.join(unknown)}", s, a))
            lo, hi = expr_bounds(expr, m.group_of)
            if lo < 0 or hi > 1:
                if expr.is_constant:
                    msg = f"branch probability {expr.constant} outside [0, 1]"
                else:
                    msg = f"branch expression {expr} may leave [0, 1] (range [{lo}, {hi}])"
                out.append(Violation("range", msg, s, a))
            total = total + expr
        reduced = reduce_groups(total, m.groups)
        if not (reduced.is_constant and reduced.constant == 1):
            out.append(Violation("sum", f"branch sum {total} does not reduce to 1 (sum != 1)", s, a))
    for s in m.states:
        if not m.actions_by_state.get(s):
            out.append(Violation("no-action", "state has no enabled action", s))
    return out
