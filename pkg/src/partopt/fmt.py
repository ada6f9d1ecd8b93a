"""Line-oriented text formats for models, policies, masks and valuations.

Model files::

    pmdp <name>
    param <id> ...
    group <id> <id> ...
    action <id> ...
    state <id> [reward <num>] [label k=v,...]
    init <id>
    trans <state> <action> : <expr> -> <state> [+ <expr> -> <state> ...]

Policy files start with ``policy <id>`` and contain assignment lines and
``allow`` rules.  An assignment line with several comma-separated entries is
a parameter group and must sum to 1; an optional ``prefix:`` namespaces every
name on the line (``s1: p2=0, p3=1`` assigns ``s1.p2`` and ``s1.p3``)::

    policy b1
    s1: p2=0, p3=0.8, p4=0.2, p0a=0
    allow env=low,battery=low : standby sleep tick

Valuation files hold assignment lines only; mask files hold ``allow`` lines
under an optional ``mask <id>`` header.  ``#`` starts a comment everywhere.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Tuple

from partopt.errors import ModelError, PartoptError
from partopt.model import (
    AvailabilityMask,
    LinExpr,
    MaskRule,
    ParamGroup,
    Pmdp,
    Policy,
    Valuation,
    group_violations,
    validate_model,
)

SYNTAX = "syntax"
DUPLICATE = "duplicate-declaration"
UNKNOWN = "unknown-symbol"
RANGE = "range"


@dataclass(frozen=True)
class SourceLocation:
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}"


class ParseError(PartoptError):
    def __init__(self, location: SourceLocation, kind: str, message: str):
        super().__init__(f"{location}: {kind}: {message}")
        self.location = location
        self.kind = kind
        self.message = message


_HEADER_RE = re.compile(r"\s*(policy|mask)\s+([A-Za-z0-9_][A-Za-z0-9_.\-]*)\s*\Z")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<num>\d+(?:\.\d*)?|\.\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)|(?P<op>[+\-*/:=,]))"
)


@dataclass
class Token:
    kind: str  # "num", "ident", "op" ("->" included), "eol"
    text: str
    col: int


def tokenize(line: str, lineno: int) -> List[Token]:
    tokens = []
    pos = 0
    n = len(line)
    while pos < n:
        if line[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(line, pos)
        if m is None or m.end() == pos:
            raise ParseError(SourceLocation(lineno, pos + 1), SYNTAX, f"unexpected character {line[pos]!r}")
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        tokens.append(Token("op" if kind == "arrow" else kind, text, start + 1))
        pos = m.end()
    tokens.append(Token("eol", "", n + 1))
    return tokens


class _Cursor:
    def __init__(self, tokens: List[Token], lineno: int):
        self.tokens = tokens
        self.i = 0
        self.lineno = lineno

    def peek(self, k: int = 0) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        self.i += 1
        return tok

    def loc(self, tok: Optional[Token] = None) -> SourceLocation:
        tok = tok or self.peek()
        return SourceLocation(self.lineno, max(tok.col, 1))

    def error(self, message: str, tok: Optional[Token] = None, kind: str = SYNTAX) -> ParseError:
        return ParseError(self.loc(tok), kind, message)

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text == text

    def expect_op(self, text: str) -> Token:
        tok = self.next()
        if tok.kind != "op" or tok.text != text:
            raise self.error(f"expected {text!r}, found {tok.text or 'end of line'!r}", tok)
        return tok

    def ident(self, what: str) -> Token:
        tok = self.next()
        if tok.kind != "ident":
            raise self.error(f"expected {what}, found {tok.text or 'end of line'!r}", tok)
        return tok

    def at_end(self) -> bool:
        return self.peek().kind == "eol"

    def end(self):
        tok = self.peek()
        if tok.kind != "eol":
            raise self.error(f"unexpected {tok.text!r}", tok)

    def number(self) -> Fraction:
        tok = self.next()
        if tok.kind != "num":
            raise self.error(f"expected a number, found {tok.text or 'end of line'!r}", tok)
        value = Fraction(tok.text)
        if self.at("/") and self.peek(1).kind == "num":
            self.next()
            den_tok = self.next()
            den = Fraction(den_tok.text)
            if den == 0:
                raise self.error("division by zero", den_tok, RANGE)
            value /= den
        return value

    def signed_number(self) -> Fraction:
        if self.at("-"):
            self.next()
            return -self.number()
        return self.number()


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if line.strip():
            yield lineno, line


# -- numbers and expressions -------------------------------------------------


def format_number(q: Fraction) -> str:
    """Exact rendering: terminating decimals as decimals, others as ``a/b``."""
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{q.numerator}/{q.denominator}"
    digits = max(twos, fives)
    scaled = abs(q.numerator) * 10**digits // q.denominator
    sign = "-" if q < 0 else ""
    whole, frac = divmod(scaled, 10**digits)
    return f"{sign}{whole}.{str(frac).rjust(digits, '0').rstrip('0')}"


def format_expr(e: LinExpr) -> str:
    parts: List[str] = []
    if e.constant != 0 or not e.terms:
        parts.append(format_number(e.constant))
    for name, coeff in e.terms:
        mag = abs(coeff)
        body = name if mag == 1 else f"{format_number(mag)}*{name}"
        if not parts:
            parts.append(body if coeff > 0 else f"-{body}")
        else:
            parts.append(("+ " if coeff > 0 else "- ") + body)
    return " ".join(parts)


def _parse_term(cur: _Cursor) -> Tuple[LinExpr, List[Tuple[str, Token]]]:
    tok = cur.peek()
    if tok.kind == "ident":
        cur.next()
        return LinExpr.param(tok.text), [(tok.text, tok)]
    if tok.kind == "num":
        value = cur.number()
        if cur.at("*"):
            cur.next()
            name = cur.ident("a parameter name")
            return LinExpr.param(name.text, value), [(name.text, name)]
        return LinExpr.const(value), []
    raise cur.error(f"expected a number or parameter, found {tok.text or 'end of line'!r}")


def _parse_expr(cur: _Cursor) -> Tuple[LinExpr, List[Tuple[str, Token]]]:
    negate = False
    if cur.at("-"):
        cur.next()
        negate = True
    expr, refs = _parse_term(cur)
    if negate:
        expr = -expr
    while cur.at("+") or cur.at("-"):
        op = cur.next().text
        term, more = _parse_term(cur)
        refs.extend(more)
        expr = expr + term if op == "+" else expr - term
    return expr, refs


def parse_expr(text: str) -> LinExpr:
    """Parse a standalone expression such as ``"1 - env.low"``."""
    cur = _Cursor(tokenize(text, 1), 1)
    expr, _ = _parse_expr(cur)
    cur.end()
    return expr


# -- models --------------------------------------------------------------------


@dataclass
class _TransDecl:
    state: Token
    action: Token
    branches: List[Tuple[LinExpr, Token, Token, List[Tuple[str, Token]]]]
    lineno: int


def parse_model(text: str, validate: bool = True) -> Pmdp:
    """Parse a model file.

    With ``validate`` (the default) any :func:`validate_model` violation is
    raised as a :class:`ParseError` located at the offending ``trans`` line.
    """
    name = None
    params: List[str] = []
    param_decl: Dict[str, SourceLocation] = {}
    groups: List[ParamGroup] = []
    group_locs: List[Tuple[List[Token], int]] = []
    actions: List[str] = []
    action_decl: Dict[str, SourceLocation] = {}
    states: List[str] = []
    state_decl: Dict[str, SourceLocation] = {}
    rewards: Dict[str, Fraction] = {}
    labels: Dict[str, Tuple[Tuple[str, str], ...]] = {}
    initial: Optional[Tuple[str, SourceLocation]] = None
    trans: Dict[Tuple[str, str], _TransDecl] = {}
    last_line = 1

    def declare(table: Dict[str, SourceLocation], tok: Token, lineno: int, what: str):
        if tok.text in table:
            first = table[tok.text]
            raise ParseError(
                SourceLocation(lineno, tok.col), DUPLICATE, f"{what} {tok.text!r} already declared at {first}"
            )
        table[tok.text] = SourceLocation(lineno, tok.col)

    for lineno, line in _lines(text):
        last_line = lineno
        cur = _Cursor(tokenize(line, lineno), lineno)
        kw = cur.ident("a statement keyword")
        if kw.text == "pmdp":
            if name is not None:
                raise cur.error("duplicate pmdp header", kw, DUPLICATE)
            name = cur.ident("a model name").text
            cur.end()
        elif kw.text == "param":
            if cur.at_end():
                raise cur.error("param needs at least one identifier")
            while not cur.at_end():
                tok = cur.ident("a parameter name")
                declare(param_decl, tok, lineno, "parameter")
                params.append(tok.text)
        elif kw.text == "group":
            members = []
            while not cur.at_end():
                members.append(cur.ident("a parameter name"))
            if len(members) < 2:
                raise cur.error("a group needs at least two members", kw)
            names = [t.text for t in members]
            if len(set(names)) != len(names):
                raise cur.error("duplicate member in group", kw, DUPLICATE)
            groups.append(ParamGroup(tuple(names)))
            group_locs.append((members, lineno))
        elif kw.text == "action":
            if cur.at_end():
                raise cur.error("action needs at least one identifier")
            while not cur.at_end():
                tok = cur.ident("an action name")
                declare(action_decl, tok, lineno, "action")
                actions.append(tok.text)
        elif kw.text == "state":
            tok = cur.ident("a state name")
            declare(state_decl, tok, lineno, "state")
            states.append(tok.text)
            while not cur.at_end():
                opt = cur.ident("'reward' or 'label'")
                if opt.text == "reward":
                    if tok.text in rewards:
                        raise cur.error("duplicate reward", opt, DUPLICATE)
                    rewards[tok.text] = cur.signed_number()
                elif opt.text == "label":
                    if tok.text in labels:
                        raise cur.error("duplicate label list", opt, DUPLICATE)
                    labels[tok.text] = tuple(_parse_label_pairs(cur))
                else:
                    raise cur.error(f"unknown state option {opt.text!r}", opt)
        elif kw.text == "init":
            tok = cur.ident("a state name")
            if initial is not None:
                raise cur.error("duplicate init", kw, DUPLICATE)
            initial = (tok.text, cur.loc(tok))
            cur.end()
        elif kw.text == "trans":
            s = cur.ident("a source state")
            a = cur.ident("an action")
            cur.expect_op(":")
            branches = []
            targets = set()
            while True:
                start = cur.peek()
                expr, refs = _parse_expr(cur)
                cur.expect_op("->")
                t = cur.ident("a target state")
                if t.text in targets:
                    raise cur.error(f"duplicate target {t.text!r}", t, DUPLICATE)
                targets.add(t.text)
                if expr.is_zero:
                    raise cur.error("branch probability is identically 0", start, RANGE)
                branches.append((expr, start, t, refs))
                if cur.at_end():
                    break
                cur.expect_op("+")
            key = (s.text, a.text)
            if key in trans:
                raise cur.error(f"duplicate transition block for ({s.text}, {a.text})", s, DUPLICATE)
            trans[key] = _TransDecl(s, a, branches, lineno)
        else:
            raise cur.error(f"unknown statement {kw.text!r}", kw)

    end_loc = SourceLocation(last_line, 1)
    if name is None:
        raise ParseError(SourceLocation(1, 1), SYNTAX, "missing 'pmdp <name>' header")
    if initial is None:
        raise ParseError(end_loc, SYNTAX, "missing 'init <state>' statement")
    if initial[0] not in state_decl:
        raise ParseError(initial[1], UNKNOWN, f"unknown initial state {initial[0]!r}")
    for members, lineno in group_locs:
        for tok in members:
            if tok.text not in param_decl:
                raise ParseError(SourceLocation(lineno, tok.col), UNKNOWN, f"unknown parameter {tok.text!r}")
    for decl in trans.values():
        if decl.state.text not in state_decl:
            raise ParseError(SourceLocation(decl.lineno, decl.state.col), UNKNOWN, f"unknown state {decl.state.text!r}")
        if decl.action.text not in action_decl:
            raise ParseError(
                SourceLocation(decl.lineno, decl.action.col), UNKNOWN, f"unknown action {decl.action.text!r}"
            )
        for _, _, t, refs in decl.branches:
            if t.text not in state_decl:
                raise ParseError(SourceLocation(decl.lineno, t.col), UNKNOWN, f"unknown state {t.text!r}")
            for pname, ptok in refs:
                if pname not in param_decl:
                    raise ParseError(SourceLocation(decl.lineno, ptok.col), UNKNOWN, f"unknown parameter {pname!r}")

    transitions = {
        key: tuple((expr, t.text) for expr, _, t, _ in decl.branches) for key, decl in trans.items()
    }
    try:
        model = Pmdp(
            name=name,
            states=tuple(states),
            initial=initial[0],
            actions=tuple(actions),
            transitions=transitions,
            params=tuple(params),
            groups=tuple(groups),
            rewards={s: rewards.get(s, Fraction(0)) for s in states},
            labels={s: labels.get(s, ()) for s in states},
        )
    except ModelError as exc:
        raise ParseError(end_loc, RANGE, str(exc)) from None

    if validate:
        violations = validate_model(model)
        if violations:
            v = violations[0]
            if v.action is not None and (v.state, v.action) in trans:
                decl = trans[(v.state, v.action)]
                loc = SourceLocation(decl.lineno, decl.state.col)
            elif v.state in state_decl:
                loc = state_decl[v.state]
            else:
                loc = end_loc
            kind = UNKNOWN if v.kind in ("dangling", "unknown-param", "initial") else RANGE
            raise ParseError(loc, kind, str(v))
    return model


def _parse_label_pairs(cur: _Cursor) -> List[Tuple[str, str]]:
    pairs = []
    keys = set()
    while True:
        k = cur.ident("a label key")
        cur.expect_op("=")
        v = cur.next()
        if v.kind not in ("ident", "num"):
            raise cur.error("expected a label value", v)
        if k.text in keys:
            raise cur.error(f"duplicate label key {k.text!r}", k, DUPLICATE)
        keys.add(k.text)
        pairs.append((k.text, v.text))
        if not cur.at(","):
            break
        cur.next()
    return pairs


def serialize_model(m: Pmdp) -> str:
    """Canonical text for ``m``; ``parse_model`` reproduces ``m`` exactly."""
    out = [f"pmdp {m.name}"]
    if m.params:
        out.append("param " + " ".join(m.params))
    for g in m.groups:
        out.append("group " + " ".join(g.members))
    if m.actions:
        out.append("action " + " ".join(m.actions))
    for s in m.states:
        line = f"state {s}"
        r = m.reward(s)
        if r != 0:
            line += f" reward {format_number(r)}"
        lab = m.labels.get(s, ())
        if lab:
            line += " label " + ",".join(f"{k}={v}" for k, v in lab)
        out.append(line)
    out.append(f"init {m.initial}")
    for (s, a), branches in m.transitions.items():
        body = " + ".join(f"{format_expr(e)} -> {t}" for e, t in branches)
        out.append(f"trans {s} {a} : {body}")
    return "\n".join(out) + "\n"


# -- valuations, policies, masks ------------------------------------------------


def _parse_assignments(cur: _Cursor, seen: Dict[str, SourceLocation]) -> List[Tuple[str, Fraction, Token]]:
    prefix = ""
    if cur.peek().kind == "ident" and cur.peek(1).kind == "op" and cur.peek(1).text == ":":
        prefix = cur.next().text + "."
        cur.next()
    items = []
    while True:
        tok = cur.ident("a parameter name")
        cur.expect_op("=")
        value_tok = cur.peek()
        value = cur.signed_number()
        name = prefix + tok.text
        if not 0 <= value <= 1:
            raise cur.error(f"value {format_number(value)} for {name!r} is outside [0, 1]", value_tok, RANGE)
        if name in seen:
            raise cur.error(f"{name!r} already assigned at {seen[name]}", tok, DUPLICATE)
        seen[name] = cur.loc(tok)
        items.append((name, value, tok))
        if cur.at_end():
            break
        cur.expect_op(",")
    if len(items) > 1:
        total = sum((v for _, v, _ in items), Fraction(0))
        if total != 1:
            raise ParseError(
                cur.loc(items[0][2]),
                RANGE,
                f"group ({', '.join(n for n, _, _ in items)}) sums to {format_number(total)} (sum != 1)",
            )
    return items


def _parse_rule(cur: _Cursor) -> MaskRule:
    predicate = []
    if cur.at("*"):
        cur.next()
    elif not cur.at(":"):
        predicate = _parse_label_pairs(cur)
    cur.expect_op(":")
    allowed = []
    while not cur.at_end():
        allowed.append(cur.ident("an action name").text)
    if not allowed:
        raise cur.error("an allow rule needs at least one action")
    return MaskRule(tuple(predicate), frozenset(allowed))


def _check_against_model(assign: Dict[str, Fraction], locs: Dict[str, SourceLocation], model: Optional[Pmdp]):
    if model is None:
        return
    declared = set(model.params)
    for name, loc in locs.items():
        if name not in declared:
            raise ParseError(loc, UNKNOWN, f"unknown parameter {name!r}")
    for g in model.groups:
        if all(mm in assign for mm in g.members):
            problems = group_violations(assign, [g])
            if problems:
                raise ParseError(locs[g.members[-1]], RANGE, problems[0] + " (sum != 1)")


def parse_valuation(text: str, model: Optional[Pmdp] = None) -> Valuation:
    """Parse ``<param>=<num>`` lines (comma-separated lines form groups)."""
    assign: Dict[str, Fraction] = {}
    locs: Dict[str, SourceLocation] = {}
    for lineno, line in _lines(text):
        cur = _Cursor(tokenize(line, lineno), lineno)
        for name, value, _ in _parse_assignments(cur, locs):
            assign[name] = value
    _check_against_model(assign, locs, model)
    return Valuation(assign)


def parse_mask(text: str) -> AvailabilityMask:
    mask_id = ""
    rules = []
    for lineno, line in _lines(text):
        header = _HEADER_RE.match(line)
        if header and header.group(1) == "mask":
            if mask_id:
                raise ParseError(SourceLocation(lineno, 1), DUPLICATE, "duplicate mask header")
            mask_id = header.group(2)
            continue
        cur = _Cursor(tokenize(line, lineno), lineno)
        kw = cur.ident("'mask' or 'allow'")
        if kw.text == "allow":
            rules.append(_parse_rule(cur))
        else:
            raise cur.error(f"unknown statement {kw.text!r}", kw)
    return AvailabilityMask(tuple(rules), mask_id)


def parse_policies(text: str, model: Optional[Pmdp] = None) -> List[Policy]:
    """Parse one or more ``policy <id>`` blocks."""
    policies = []
    current = None

    def finish():
        if current is None:
            return
        pid, assign, locs, rules = current
        _check_against_model(assign, locs, model)
        mask = AvailabilityMask(tuple(rules), pid) if rules else None
        policies.append(Policy(pid, Valuation(assign), mask))

    ids = {}
    for lineno, line in _lines(text):
        header = _HEADER_RE.match(line)
        if header and header.group(1) == "policy":
            pid = header.group(2)
            if pid in ids:
                raise ParseError(
                    SourceLocation(lineno, header.start(2) + 1), DUPLICATE,
                    f"policy {pid!r} already declared at line {ids[pid]}",
                )
            ids[pid] = lineno
            finish()
            current = (pid, {}, {}, [])
            continue
        cur = _Cursor(tokenize(line, lineno), lineno)
        first = cur.peek()
        if current is None:
            raise cur.error("expected 'policy <id>' header", first)
        if first.kind == "ident" and first.text == "allow" and cur.peek(1).text != "=":
            cur.next()
            current[3].append(_parse_rule(cur))
            continue
        for name, value, _ in _parse_assignments(cur, current[2]):
            current[1][name] = value
    finish()
    if not policies:
        raise ParseError(SourceLocation(1, 1), SYNTAX, "no 'policy <id>' block found")
    return policies


def parse_policy(text: str, model: Optional[Pmdp] = None) -> Policy:
    """Parse a file holding exactly one policy."""
    policies = parse_policies(text, model)
    if len(policies) != 1:
        raise ParseError(SourceLocation(1, 1), SYNTAX, f"expected one policy, found {len(policies)}")
    return policies[0]


def _format_rule(rule: MaskRule) -> str:
    pred = ",".join(f"{k}={v}" for k, v in rule.predicate) or "*"
    return f"allow {pred} : " + " ".join(sorted(rule.allowed))


def serialize_mask(mask: AvailabilityMask) -> str:
    lines = [f"mask {mask.id}"] if mask.id else []
    lines.extend(_format_rule(r) for r in mask.rules)
    return "\n".join(lines) + "\n"


def serialize_valuation(v: Valuation, groups: Iterable[ParamGroup] = ()) -> str:
    """Render ``v``; members of each fully assigned group share one line."""
    lines = []
    done = set()
    for g in groups:
        if all(m in v for m in g.members):
            lines.append(", ".join(f"{m}={format_number(v[m])}" for m in g.members))
            done.update(g.members)
    for name in v:
        if name not in done:
            lines.append(f"{name}={format_number(v[name])}")
    return "\n".join(lines) + "\n"


def serialize_policy(pol: Policy, groups: Iterable[ParamGroup] = ()) -> str:
    text = f"policy {pol.id}\n" + serialize_valuation(pol.valuation, groups)
    if pol.mask:
        text += "".join(_format_rule(r) + "\n" for r in pol.mask.rules)
    return text
