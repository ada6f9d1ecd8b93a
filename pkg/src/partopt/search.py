"""Candidate enumeration, per-candidate evaluation, ranking and reports."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from partopt.energy import Category
from partopt.errors import AllCandidatesFailed, EmptyCandidateSet, InitialStateEliminated, InvalidDistribution
from partopt.fmt import format_number, serialize_model
from partopt.metrics import balancing, score, variation
from partopt.model import ONE, AvailabilityMask, ParamGroup, Pmdp, Policy, Valuation
from partopt.prune import apply_policy, eliminate_unavailable
from partopt.scc import SizeHistogram, decompose, size_histogram

ROW_FAILURES = (InitialStateEliminated, InvalidDistribution)

NO_CATEGORY = Category("none", "", "", AvailabilityMask())


@dataclass(frozen=True)
class CandidateSet:
    category: str
    candidates: Tuple[Policy, ...]
    source: str  # "explicit-file" | "grid"

    def __post_init__(self):
        ids = [p.id for p in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate ids must be unique")

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class EvaluationRow:
    policy_id: str
    valuation: Valuation
    histogram: SizeHistogram
    balancing: float
    variation: float
    score: float
    index: int = 0
    n_states: int = 0

    @property
    def n_components(self) -> int:
        return self.histogram.total

    @property
    def n_singletons(self) -> int:
        return self.histogram.singletons

    def sort_key(self):
        return (self.score, self.n_singletons, self.n_components, self.index)


@dataclass(frozen=True)
class Failure:
    index: int
    policy_id: str
    reason: str


@dataclass
class Report:
    rows: List[EvaluationRow]
    fingerprint: str
    groups: Tuple[ParamGroup, ...] = ()
    category: str = ""
    diagnostics: List[Failure] = field(default_factory=list)

    @property
    def best(self) -> str:
        return self.rows[0].policy_id


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def grid_valuations(groups: Sequence[ParamGroup], step) -> List[Dict[str, Fraction]]:
    step = Fraction(step) if not isinstance(step, float) else Fraction(repr(step))
    if step <= 0 or step > 1 or (1 / step).denominator != 1:
        raise ValueError(f"grid step {step} must divide 1 evenly")
    units = int(1 / step)
    per_group = []
    for g in groups:
        options = []
        for comp in _compositions(units, len(g.members)):
            options.append({m: c * step for m, c in zip(g.members, comp)})
        per_group.append(options)
    out = []
    for combo in itertools.product(*per_group):
        merged: Dict[str, Fraction] = {}
        for part in combo:
            merged.update(part)
        out.append(merged)
    return out


def enumerate_candidates(
    *,
    explicit: Optional[Sequence[Policy]] = None,
    groups: Optional[Sequence[ParamGroup]] = None,
    step=None,
    base: Optional[Mapping[str, Fraction]] = None,
    category: str = "",
    prefix: str = "g",
) -> CandidateSet:
    """Build a candidate set from an explicit policy list or a lattice grid.

    The grid gives every member of each group in ``groups`` a multiple of
    ``step`` with the group summing to 1, and takes the product across groups.
    Parameters outside ``groups`` take their value from ``base``.
    """
    if explicit is not None:
        if not explicit:
            raise EmptyCandidateSet("explicit candidate list is empty")
        return CandidateSet(category, tuple(explicit), "explicit-file")
    if not groups or step is None:
        raise EmptyCandidateSet("grid enumeration needs at least one group and a step")
    valuations = grid_valuations(groups, step)
    width = len(str(len(valuations)))
    base = dict(base or {})
    policies = []
    for i, vals in enumerate(valuations, start=1):
        assign = dict(base)
        assign.update(vals)
        policies.append(Policy(f"{prefix}{i:0{width}d}", Valuation(assign, groups)))
    return CandidateSet(category, tuple(policies), "grid")


def default_base(m: Pmdp) -> Dict[str, Fraction]:
    """Put each group's full mass on its first member."""
    return {p: (ONE if g.members[0] == p else Fraction(0)) for g in m.groups for p in g.members}


def full_theta(m: Pmdp, pol: Policy, theta_env: Optional[Mapping[str, Fraction]] = None) -> Dict[str, Fraction]:
    """Policy valuation over environment values; unassigned parameters default to 1."""
    theta = {p: ONE for p in m.params}
    theta.update(theta_env or {})
    theta.update(pol.valuation)
    return theta


def _evaluate_masked(original: Pmdp, masked: Pmdp, pol: Policy, theta_env, index: int) -> EvaluationRow:
    pruned, _ = apply_policy(masked, pol)
    cs = decompose(pruned)
    hist = size_histogram(cs)
    bal = balancing(hist)
    var = variation(cs, full_theta(original, pol, theta_env), original.params)
    return EvaluationRow(pol.id, pol.valuation, hist, bal, var, score(bal, var), index, len(pruned.states))


def evaluate_candidate(
    m: Pmdp, cat: Category, pol: Policy, theta_env: Optional[Mapping[str, Fraction]] = None, index: int = 0
) -> EvaluationRow:
    """Mask by category, apply the policy, decompose and score.

    Raises :class:`InitialStateEliminated` or :class:`InvalidDistribution`
    when the candidate cannot be evaluated.
    """
    masked, _ = eliminate_unavailable(m, cat.mask.combine(pol.mask))
    return _evaluate_masked(m, masked, pol, theta_env, index)


def fingerprint(m: Pmdp, text: Optional[str] = None) -> str:
    data = text if text is not None else serialize_model(m)
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        raw = os.environ.get("PARTOPT_THREADS", "1").strip() or "1"
        try:
            workers = int(raw)
        except ValueError:
            raise ValueError(f"PARTOPT_THREADS must be an integer, got {raw!r}") from None
    if workers < 0:
        raise ValueError("worker count must be >= 0")
    if workers == 0:
        workers = os.cpu_count() or 1
    return workers


_WORKER_STATE = {}


def _worker_init(original, cat, theta_env, candidates):
    _WORKER_STATE.update(original=original, cat=cat, theta_env=theta_env, candidates=candidates, masked={})


def _masked_for(original: Pmdp, cat: Category, pol: Policy, cache: dict) -> Pmdp:
    key = pol.mask
    if key not in cache:
        cache[key] = eliminate_unavailable(original, cat.mask.combine(pol.mask))[0]
    return cache[key]


def _run_one(index: int, original: Pmdp, cat: Category, pol: Policy, theta_env, cache: dict):
    try:
        masked = _masked_for(original, cat, pol, cache)
        return _evaluate_masked(original, masked, pol, theta_env, index)
    except ROW_FAILURES as exc:
        return Failure(index, pol.id, f"{type(exc).__name__}: {exc}")


def _worker_run(index: int):
    st = _WORKER_STATE
    return _run_one(index, st["original"], st["cat"], st["candidates"][index], st["theta_env"], st["masked"])


def best_policy(
    m: Pmdp,
    cat: Category,
    cands: CandidateSet,
    theta_env: Optional[Mapping[str, Fraction]] = None,
    workers: Optional[int] = None,
    model_text: Optional[str] = None,
) -> Report:
    """Evaluate every candidate and rank ascending by (score, #SS, #C, index).

    ``workers`` > 1 evaluates in a process pool; results are identical to
    sequential evaluation.  ``None`` reads ``PARTOPT_THREADS``.
    """
    if not cands.candidates:
        raise EmptyCandidateSet("no candidates")
    workers = resolve_workers(workers)
    n = len(cands.candidates)
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(
            max_workers=min(workers, n),
            initargs=(m, cat, theta_env, cands.candidates),
            initializer=_worker_init,
        ) as pool:
            results = list(pool.map(_worker_run, range(n), chunksize=max(1, n // (4 * workers))))
    else:
        cache: dict = {}
        results = [_run_one(i, m, cat, pol, theta_env, cache) for i, pol in enumerate(cands.candidates)]
    rows = [r for r in results if isinstance(r, EvaluationRow)]
    failures = [r for r in results if isinstance(r, Failure)]
    if not rows:
        raise AllCandidatesFailed(failures)
    return build_report(rows, fingerprint(m, model_text), m.groups, cat.id, failures)


def build_report(rows, fp: str = "", groups=(), category: str = "", diagnostics=()) -> Report:
    rows = sorted(rows, key=EvaluationRow.sort_key)
    if not rows:
        raise ValueError("a report needs at least one row")
    return Report(list(rows), fp, tuple(groups), category, list(diagnostics))


# -- rendering ----------------------------------------------------------------------


def format_metric(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


def _json_metric(x: float):
    return "inf" if math.isinf(x) else float(f"{x:.6f}")


def _group_label(g: ParamGroup) -> str:
    return ",".join(g.members)


def _group_cell(v: Mapping[str, Fraction], g: ParamGroup) -> str:
    return ",".join(format_number(v[p]) if p in v else "" for p in g.members)


HEADER_TAIL = ("#C", "#SS", "S:#C", "Bal", "Var", "score")


def render_tsv(report: Report) -> str:
    header = ["policy"] + [_group_label(g) for g in report.groups] + list(HEADER_TAIL)
    lines = ["\t".join(header)]
    for r in report.rows:
        cells = [r.policy_id]
        cells += [_group_cell(r.valuation, g) for g in report.groups]
        cells += [
            str(r.n_components),
            str(r.n_singletons),
            str(r.histogram),
            format_metric(r.balancing),
            format_metric(r.variation),
            format_metric(r.score),
        ]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def report_to_dict(report: Report) -> dict:
    return {
        "category": report.category,
        "fingerprint": report.fingerprint,
        "best": report.best,
        "rows": [
            {
                "policy": r.policy_id,
                "valuations": {_group_label(g): _group_cell(r.valuation, g) for g in report.groups},
                "#C": r.n_components,
                "#SS": r.n_singletons,
                "S:#C": str(r.histogram),
                "Bal": _json_metric(r.balancing),
                "Var": _json_metric(r.variation),
                "score": _json_metric(r.score),
            }
            for r in report.rows
        ],
        "diagnostics": [{"index": f.index, "policy": f.policy_id, "reason": f.reason} for f in report.diagnostics],
    }


def render_json(report: Report) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"
