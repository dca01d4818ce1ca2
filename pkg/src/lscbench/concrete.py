"""Concrete syntax and serialization.

Term grammar (backslash introduces abstractions; a Unicode lambda is accepted
on input, never printed):

    term    := '\\' ident '.' term | app
    app     := atom atom*                     left-associative
    atom    := base ('[' ident '<-' term ']')*
    base    := ident | '(' term ')'
    ident   := ASCII letter, then letters or digits

Derivation documents are JSON: each node carries rule/ctx/term/type/m/e and
its premises; linear types encode as the string "normal" or {"src": [...],
"tgt": ...}, multi types as arrays.  Traces serialize as
{"strategy", "steps": [{"kind", "term"}], "m", "e"}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

from .derivations import Derivation, RuleName, SystemId
from .evaluator import StrategyId, Trace
from .multitypes import (
    Arrow,
    Judgement,
    LinearType,
    MultiType,
    NormalType,
    TypeContext,
    TypeSystem,
)
from .syntax import Abs, App, ESub, Term, Var, Variable


@dataclass(frozen=True)
class SourceText:
    text: str
    origin: str = "<input>"


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int, origin: str = "<input>"):
        self.line = line
        self.col = col
        self.origin = origin
        super().__init__(f"{origin}:{line}:{col}: {message}")


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_PUNCT = {"\\": "LAMBDA", "λ": "LAMBDA", ".": "DOT", "(": "LP", ")": "RP", "[": "LB", "]": "RB"}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _lex(src: str, origin: str) -> list[_Token]:
    toks: list[_Token] = []
    line, col = 1, 1
    i = 0
    while i < len(src):
        c = src[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c.isspace():
            col += 1
            i += 1
            continue
        if c in _PUNCT:
            toks.append(_Token(_PUNCT[c], c, line, col))
            i += 1
            col += 1
            continue
        if c == "<" and i + 1 < len(src) and src[i + 1] == "-":
            toks.append(_Token("ARROW", "<-", line, col))
            i += 2
            col += 2
            continue
        if c.isascii() and c.isalpha():
            j = i
            while j < len(src) and src[j].isascii() and src[j].isalnum():
                j += 1
            toks.append(_Token("IDENT", src[i:j], line, col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", line, col, origin)
    toks.append(_Token("EOF", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, toks: list[_Token], origin: str):
        self.toks = toks
        self.pos = 0
        self.origin = origin

    def peek(self) -> _Token:
        return self.toks[self.pos]

    def next(self) -> _Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind: str, what: str) -> _Token:
        t = self.peek()
        if t.kind != kind:
            self.fail(f"expected {what}", t)
        return self.next()

    def fail(self, message: str, tok: Optional[_Token] = None):
        tok = tok or self.peek()
        shown = f", found {tok.text!r}" if tok.kind != "EOF" else " at end of input"
        raise ParseError(message + shown, tok.line, tok.col, self.origin)

    def term(self) -> Term:
        if self.peek().kind == "LAMBDA":
            self.next()
            name = self.expect("IDENT", "a binder name")
            self.expect("DOT", "'.'")
            return Abs(Variable(name.text), self.term())
        return self.app()

    def app(self) -> Term:
        t = self.atom()
        while self.peek().kind in ("IDENT", "LP"):
            t = App(t, self.atom())
        return t

    def atom(self) -> Term:
        tok = self.peek()
        if tok.kind == "IDENT":
            self.next()
            t: Term = Var(Variable(tok.text))
        elif tok.kind == "LP":
            self.next()
            t = self.term()
            self.expect("RP", "')'")
        else:
            self.fail("expected a term")
        while self.peek().kind == "LB":
            self.next()
            name = self.expect("IDENT", "a binder name")
            self.expect("ARROW", "'<-'")
            arg = self.term()
            self.expect("RB", "']'")
            t = ESub(t, Variable(name.text), arg)
        return t


def parse_term(src: Union[str, SourceText]) -> Term:
    if isinstance(src, str):
        src = SourceText(src)
    parser = _Parser(_lex(src.text, src.origin), src.origin)
    t = parser.term()
    tok = parser.peek()
    if tok.kind != "EOF":
        parser.fail("trailing input", tok)
    return t


# ---------------------------------------------------------------------------
# Printer (minimal parenthesization)
# ---------------------------------------------------------------------------

_TOP, _APPL, _APPR, _ATOM = range(4)


def _print(t: Term, level: int) -> str:
    match t:
        case Var(v):
            return v.pretty()
        case Abs(x, b):
            s = f"\\{x.pretty()}.{_print(b, _TOP)}"
            return f"({s})" if level != _TOP else s
        case App(l, r):
            s = f"{_print(l, _APPL)} {_print(r, _APPR)}"
            return f"({s})" if level in (_APPR, _ATOM) else s
        case ESub(b, x, a):
            return f"{_print(b, _ATOM)}[{x.pretty()}<-{_print(a, _TOP)}]"
    raise TypeError(f"not a term: {t!r}")


def print_term(t: Term) -> str:
    return _print(t, _TOP)


# ---------------------------------------------------------------------------
# Type and derivation documents
# ---------------------------------------------------------------------------


class DocumentError(Exception):
    """A derivation document is malformed."""


def linear_to_obj(ty: LinearType):
    if isinstance(ty, NormalType):
        return "normal"
    assert isinstance(ty, Arrow)
    tgt = multi_to_obj(ty.target) if isinstance(ty.target, MultiType) else linear_to_obj(ty.target)
    return {"src": multi_to_obj(ty.source), "tgt": tgt}


def multi_to_obj(mt: MultiType) -> list:
    return [linear_to_obj(el) for el in mt.elements]


def obj_to_linear(obj, grammar: TypeSystem) -> LinearType:
    if obj == "normal":
        if grammar is TypeSystem.CBV:
            raise DocumentError("the normal constant does not exist in the cbv grammar")
        return NormalType(grammar)
    if isinstance(obj, dict) and set(obj) == {"src", "tgt"}:
        src = obj_to_multi(obj["src"], grammar)
        if grammar is TypeSystem.CBN:
            tgt = obj_to_linear(obj["tgt"], grammar)
        else:
            tgt = obj_to_multi(obj["tgt"], grammar)
        return Arrow(grammar, src, tgt)
    raise DocumentError(f"not a linear type encoding: {obj!r}")


def obj_to_multi(obj, grammar: TypeSystem) -> MultiType:
    if not isinstance(obj, list):
        raise DocumentError(f"not a multi type encoding: {obj!r}")
    return MultiType(grammar, tuple(obj_to_linear(el, grammar) for el in obj))


def _ctx_to_obj(ctx: TypeContext) -> dict:
    return {v.pretty(): multi_to_obj(mt) for v, mt in ctx.bindings}


def _obj_to_ctx(obj, grammar: TypeSystem) -> TypeContext:
    if not isinstance(obj, dict):
        raise DocumentError(f"not a type context encoding: {obj!r}")
    bindings = {}
    for name, arr in obj.items():
        bindings[Variable(name)] = obj_to_multi(arr, grammar)
    return TypeContext.of(grammar, bindings)


def _node_to_obj(d: Derivation) -> dict:
    j = d.judgement
    ty = multi_to_obj(j.rhs) if isinstance(j.rhs, MultiType) else linear_to_obj(j.rhs)
    return {
        "rule": d.rule.value,
        "ctx": _ctx_to_obj(j.ctx),
        "term": print_term(j.subject),
        "type": ty,
        "m": j.m,
        "e": j.e,
        "premises": [_node_to_obj(p) for p in d.premises],
    }


def derivation_to_doc(d: Derivation, sys: SystemId) -> dict:
    return {"system": sys.value, "root": _node_to_obj(d)}


_RULES = {r.value: r for r in RuleName}


def _obj_to_node(obj, grammar: TypeSystem) -> Derivation:
    if not isinstance(obj, dict):
        raise DocumentError(f"derivation node must be an object, got {obj!r}")
    missing = {"rule", "ctx", "term", "type", "m", "e", "premises"} - set(obj)
    if missing:
        raise DocumentError(f"derivation node lacks {sorted(missing)}")
    rule = _RULES.get(obj["rule"])
    if rule is None:
        raise DocumentError(f"unknown rule {obj['rule']!r}")
    try:
        subject = parse_term(SourceText(obj["term"], "<derivation term>"))
    except ParseError as exc:
        raise DocumentError(str(exc)) from None
    ty = obj["type"]
    rhs = obj_to_multi(ty, grammar) if isinstance(ty, list) else obj_to_linear(ty, grammar)
    ctx = _obj_to_ctx(obj["ctx"], grammar)
    m, e = obj["m"], obj["e"]
    if not (isinstance(m, int) and isinstance(e, int)):
        raise DocumentError("indices must be integers")
    premises = tuple(_obj_to_node(p, grammar) for p in obj["premises"])
    return Derivation(rule, Judgement(ctx, subject, rhs, m, e), premises)


def doc_to_derivation(doc) -> tuple[SystemId, Derivation]:
    if not isinstance(doc, dict) or "system" not in doc or "root" not in doc:
        raise DocumentError("document must carry 'system' and 'root'")
    try:
        sys = SystemId(doc["system"])
    except ValueError:
        raise DocumentError(f"unknown system {doc['system']!r}") from None
    return sys, _obj_to_node(doc["root"], sys.grammar)


def load_derivation(path: str) -> tuple[SystemId, Derivation]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DocumentError(f"invalid JSON: {exc}") from None
    return doc_to_derivation(doc)


def trace_to_doc(trace: Trace, strategy: StrategyId) -> dict:
    return {
        "strategy": strategy.kind.value,
        "steps": [{"kind": s.kind.value, "term": print_term(s.result)} for s in trace.steps],
        "m": trace.m_count,
        "e": trace.e_count,
    }
