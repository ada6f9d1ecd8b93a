"""Command-line driver.

Machine-readable output goes to stdout, diagnostics to stderr.  Exit codes:
0 success, 1 usage error, 2 parse/validation error, 3 pipeline failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from partopt import energy
from partopt.errors import (
    AllCandidatesFailed,
    ConfigInvalid,
    EmptyCandidateSet,
    EmptyPartition,
    InitialStateEliminated,
    InvalidDistribution,
    ModelError,
    PartoptError,
    UnboundParameter,
)
from partopt.fmt import (
    ParseError,
    parse_mask,
    parse_model,
    parse_policies,
    parse_policy,
    parse_valuation,
    serialize_mask,
    serialize_model,
)
from partopt.metrics import affected_components
from partopt.model import AvailabilityMask, Valuation, validate_model
from partopt.prune import apply_policy, eliminate_unavailable
from partopt.scc import condensation_dot, decompose
from partopt.search import (
    NO_CATEGORY,
    best_policy,
    build_report,
    default_base,
    enumerate_candidates,
    evaluate_candidate,
    fingerprint,
    render_json,
    render_tsv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_PIPELINE = 3

PIPELINE_ERRORS = (InitialStateEliminated, InvalidDistribution, AllCandidatesFailed, EmptyCandidateSet, EmptyPartition)
PARSE_ERRORS = (ParseError, ConfigInvalid, ModelError, UnboundParameter)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_model(path: str, validate: bool = True):
    text = _read(path)
    return parse_model(text, validate=validate), text


def _category(args, model) -> energy.Category:
    mask = parse_mask(_read(args.mask)) if getattr(args, "mask", None) else None
    cat_id = getattr(args, "category", None)
    if cat_id:
        cat = energy.category_by_id(cat_id)
        if mask is not None:
            cat = energy.Category(cat.id, cat.env_level, cat.battery_level, mask)
    elif mask is not None:
        cat = energy.Category(mask.id or "mask", "", "", mask)
    else:
        cat = NO_CATEGORY
    unknown = cat.mask.unknown_actions(model)
    if unknown:
        raise ModelError(f"mask references unknown actions: {', '.join(unknown)}")
    return cat


def _env(args, model) -> Optional[Valuation]:
    if not getattr(args, "env", None):
        return None
    return parse_valuation(_read(args.env), model)


def _emit(text: str):
    sys.stdout.write(text)


def cmd_validate(args) -> int:
    model, _ = _load_model(args.model, validate=False)
    violations = validate_model(model)
    _emit(f"{len(violations)} violations\n")
    for v in violations:
        _emit(f"{v}\n")
    return EXIT_OK if not violations else EXIT_PARSE


def cmd_prune(args) -> int:
    model, _ = _load_model(args.model)
    mask = parse_mask(_read(args.mask))
    unknown = mask.unknown_actions(model)
    if unknown:
        raise ModelError(f"mask references unknown actions: {', '.join(unknown)}")
    pol = parse_policy(_read(args.policy), model) if args.policy else None
    if pol is not None:
        mask = mask.combine(pol.mask)
    out, trace = eliminate_unavailable(model, mask)
    if pol is not None:
        out, trace2 = apply_policy(out, pol)
        trace = trace.merge(trace2)
    _emit(serialize_model(out))
    if args.trace:
        sys.stderr.write(json.dumps(trace.as_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_scc(args) -> int:
    model, _ = _load_model(args.model)
    cs = decompose(model)
    _emit("id\tsize\tparams\tstates\n")
    for c in cs.components:
        _emit(f"{c.id}\t{c.size}\t{','.join(sorted(c.params))}\t{' '.join(c.states)}\n")
    if args.emit_dot:
        Path(args.emit_dot).write_text(condensation_dot(model, cs), encoding="utf-8")
    return EXIT_OK


def _render(report, as_json: bool) -> str:
    return render_json(report) if as_json else render_tsv(report)


def cmd_score(args) -> int:
    model, text = _load_model(args.model)
    pol = parse_policy(_read(args.policy), model)
    cat = _category(args, model)
    row = evaluate_candidate(model, cat, pol, _env(args, model))
    report = build_report([row], fingerprint(model, text), model.groups, cat.id)
    _emit(_render(report, args.json))
    return EXIT_OK


def cmd_search(args) -> int:
    model, text = _load_model(args.model)
    cat = _category(args, model)
    if args.candidates:
        cands = enumerate_candidates(explicit=parse_policies(_read(args.candidates), model), category=cat.id)
    else:
        if args.grid_groups:
            wanted = [p.strip() for p in args.grid_groups.split(",") if p.strip()]
            groups = []
            for name in wanted:
                g = model.group_of.get(name)
                if g is None:
                    raise UsageError(f"{name!r} is not a member of any parameter group")
                if g not in groups:
                    groups.append(g)
        else:
            groups = list(model.groups)
        base = default_base(model)
        if args.base:
            base.update(parse_valuation(_read(args.base), model))
        cands = enumerate_candidates(groups=groups, step=args.grid, base=base, category=cat.id)
    report = best_policy(model, cat, cands, _env(args, model), model_text=text)
    fmt = args.format or ("json" if args.out.endswith(".json") else "tsv")
    Path(args.out).write_text(_render(report, fmt == "json"), encoding="utf-8")
    for f in report.diagnostics:
        sys.stderr.write(f"candidate {f.policy_id} failed: {f.reason}\n")
    _emit(f"{report.best}\n")
    return EXIT_OK


def cmd_gen_case(args) -> int:
    cfg = energy.load_config(args.config) if args.config else energy.default_config()
    gen = energy.generate_model(cfg)
    out = Path(args.out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    model_text = serialize_model(gen.model)
    (out / "case.pmdp").write_text(model_text, encoding="utf-8")
    cats = []
    for cat in gen.categories:
        rel = f"masks/{cat.id}.mask"
        (out / rel).write_text(serialize_mask(cat.mask), encoding="utf-8")
        cats.append({"id": cat.id, "env": cat.env_level, "battery": cat.battery_level, "mask": rel})
    manifest = {
        "model": "case.pmdp",
        "fingerprint": fingerprint(gen.model, model_text),
        "states": len(gen.model.states),
        "categories": cats,
        "policy_params": list(gen.policy_params),
        "groups": [list(g.members) for g in gen.model.groups],
        "env_params": list(gen.env_params),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    _emit(f"{out / 'case.pmdp'}\n")
    return EXIT_OK


def cmd_affected(args) -> int:
    model, _ = _load_model(args.model)
    pol = parse_policy(_read(args.policy), model)
    pruned = model
    if pol.mask:
        pruned, _ = eliminate_unavailable(model, pol.mask)
    pruned, _ = apply_policy(pruned, pol)
    cs = decompose(pruned)
    changed = [p.strip() for p in args.changed.split(",") if p.strip()]
    unknown = [p for p in changed if p not in model.params]
    if unknown:
        raise UsageError(f"unknown parameters: {', '.join(unknown)}")
    ids = sorted(affected_components(cs, changed))
    _emit("id\tsize\tparams\n")
    for cid in ids:
        c = cs.components[cid]
        _emit(f"{c.id}\t{c.size}\t{','.join(sorted(c.params))}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="partopt", description="Find the best partitioning policy of a parametric MDP.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("validate", help="check a model for well-formedness")
    s.add_argument("model")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("prune", help="apply a mask (and optionally a policy) and print the pruned model")
    s.add_argument("model")
    s.add_argument("--mask", required=True)
    s.add_argument("--policy")
    s.add_argument("--trace", action="store_true", help="print the prune trace as JSON on stderr")
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("scc", help="list strongly connected components")
    s.add_argument("model")
    s.add_argument("--emit-dot", metavar="PATH")
    s.set_defaults(func=cmd_scc)

    s = sub.add_parser("score", help="evaluate one policy")
    s.add_argument("model")
    s.add_argument("--policy", required=True)
    s.add_argument("--env")
    s.add_argument("--category")
    s.add_argument("--mask")
    fmt = s.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true")
    fmt.add_argument("--tsv", action="store_true")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("search", help="rank candidate policies for a category")
    s.add_argument("model")
    s.add_argument("--category")
    s.add_argument("--mask", help="mask file; replaces the category's built-in mask")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--candidates", metavar="FILE")
    src.add_argument("--grid", metavar="STEP")
    s.add_argument("--grid-groups", metavar="P1,P2", help="vary only the groups containing these parameters")
    s.add_argument("--base", metavar="FILE", help="valuation for parameters outside the grid")
    s.add_argument("--env")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("tsv", "json"))
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("gen-case", help="write the energy-harvesting case study")
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_gen_case)

    s = sub.add_parser("affected", help="list components affected by parameter changes")
    s.add_argument("model")
    s.add_argument("--policy", required=True)
    s.add_argument("--changed", required=True)
    s.set_defaults(func=cmd_affected)
    return p


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except PARSE_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except PIPELINE_ERRORS as exc:
        sys.stderr.write(f"pipeline failure: {exc}\n")
        return EXIT_PIPELINE
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except PartoptError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PIPELINE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
