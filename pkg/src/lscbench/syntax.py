"""Terms with explicit substitutions, binding discipline, and one-hole contexts.

Terms follow the grammar  t ::= x | \\x.t | t t | t[x<-t]  where t[x<-s] is an
explicit substitution binding x in the body only.  Evaluation code relies on a
global distinct-binders discipline: every binder in a term handed to the
evaluator or the type modules is distinct from every other binder and from all
free variables.  `rename_fresh` establishes it, `FreshSource` keeps it across
the copies made by exponential steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union


@dataclass(frozen=True, order=True)
class Variable:
    """A name plus a freshness index; index 0 means user-written."""

    base: str
    index: int = 0

    def pretty(self) -> str:
        return self.base if self.index == 0 else f"{self.base}{self.index}"

    def __repr__(self):
        return f"Variable({self.pretty()!r})" if self.index == 0 else f"Variable({self.base!r}, {self.index})"


class Term:
    """Base class for LSC syntax trees."""


@dataclass(frozen=True)
class Var(Term):
    var: Variable


@dataclass(frozen=True)
class Abs(Term):
    binder: Variable
    body: Term


@dataclass(frozen=True)
class App(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class ESub(Term):
    """t[x<-s]: body with an explicit substitution; binder scopes over body only."""

    body: Term
    binder: Variable
    arg: Term


def is_value(t: Term) -> bool:
    return isinstance(t, Abs)


def fv(t: Term) -> frozenset[Variable]:
    match t:
        case Var(v):
            return frozenset((v,))
        case Abs(x, b):
            return fv(b) - {x}
        case App(l, r):
            return fv(l) | fv(r)
        case ESub(b, x, a):
            return (fv(b) - {x}) | fv(a)
    raise TypeError(f"not a term: {t!r}")


def term_size(t: Term) -> int:
    match t:
        case Var(_):
            return 1
        case Abs(_, b):
            return 1 + term_size(b)
        case App(l, r):
            return 1 + term_size(l) + term_size(r)
        case ESub(b, _, a):
            return 1 + term_size(b) + term_size(a)
    raise TypeError(f"not a term: {t!r}")


def all_names(t: Term) -> set[str]:
    """Printed names of every variable occurrence, binders included."""
    out: set[str] = set()

    def go(t: Term) -> None:
        match t:
            case Var(v):
                out.add(v.pretty())
            case Abs(x, b):
                out.add(x.pretty())
                go(b)
            case App(l, r):
                go(l)
                go(r)
            case ESub(b, x, a):
                out.add(x.pretty())
                go(b)
                go(a)

    go(t)
    return out


def alpha_eq(t: Term, s: Term) -> bool:
    """Structural equality up to consistent renaming of bound variables."""

    def go(t, s, env_t, env_s, depth):
        match t, s:
            case Var(v), Var(w):
                lv, lw = env_t.get(v), env_s.get(w)
                if lv is None and lw is None:
                    return v == w
                return lv == lw
            case Abs(x, b), Abs(y, c):
                return go(b, c, {**env_t, x: depth}, {**env_s, y: depth}, depth + 1)
            case App(l1, r1), App(l2, r2):
                return go(l1, l2, env_t, env_s, depth) and go(r1, r2, env_t, env_s, depth)
            case ESub(b1, x, a1), ESub(b2, y, a2):
                return go(a1, a2, env_t, env_s, depth) and go(
                    b1, b2, {**env_t, x: depth}, {**env_s, y: depth}, depth + 1
                )
        return False

    return go(t, s, {}, {}, 0)


def alpha_key(t: Term):
    """Hashable canonical form; equal keys iff alpha_eq."""

    def go(t, env, depth):
        match t:
            case Var(v):
                lv = env.get(v)
                return ("f", v.base, v.index) if lv is None else ("b", lv)
            case Abs(x, b):
                return ("l", go(b, {**env, x: depth}, depth + 1))
            case App(l, r):
                return ("a", go(l, env, depth), go(r, env, depth))
            case ESub(b, x, a):
                return ("e", go(b, {**env, x: depth}, depth + 1), go(a, env, depth))
        raise TypeError(f"not a term: {t!r}")

    return go(t, {}, 0)


class FreshSource:
    """Issues variables whose printed names never collide with registered terms.

    Counters are monotone per base name, so traces are reproducible.
    """

    def __init__(self, *terms: Term):
        self._used: set[str] = set()
        self._counters: dict[str, int] = {}
        for t in terms:
            self.register(t)

    def register(self, t: Term) -> None:
        self._used |= all_names(t)

    def reserve(self, name: str) -> None:
        self._used.add(name)

    def fresh(self, base: str = "x") -> Variable:
        i = self._counters.get(base, 0) + 1
        while f"{base}{i}" in self._used:
            i += 1
        self._counters[base] = i
        v = Variable(base, i)
        self._used.add(v.pretty())
        return v


def rename_term(t: Term, mapping: dict[Variable, Variable]) -> Term:
    """Apply an injective variable renaming to all occurrences, binders included."""
    match t:
        case Var(v):
            return Var(mapping.get(v, v))
        case Abs(x, b):
            return Abs(mapping.get(x, x), rename_term(b, mapping))
        case App(l, r):
            return App(rename_term(l, mapping), rename_term(r, mapping))
        case ESub(b, x, a):
            return ESub(rename_term(b, mapping), mapping.get(x, x), rename_term(a, mapping))
    raise TypeError(f"not a term: {t!r}")


def rename_fresh(t: Term, source: Optional[FreshSource] = None) -> Term:
    """Alpha-rename so all binders are pairwise distinct and disjoint from fv(t).

    Binders are kept when possible (the result of an already-compliant term is
    itself), renamed from `source` otherwise.
    """
    if source is None:
        source = FreshSource()
        for v in fv(t):
            source.reserve(v.pretty())
    taken = {v.pretty() for v in fv(t)}

    def pick(x: Variable) -> Variable:
        if x.pretty() not in taken:
            taken.add(x.pretty())
            source.reserve(x.pretty())
            return x
        y = source.fresh(x.base)
        while y.pretty() in taken:
            y = source.fresh(x.base)
        taken.add(y.pretty())
        return y

    def go(t: Term, env: dict[Variable, Variable]) -> Term:
        match t:
            case Var(v):
                return Var(env.get(v, v))
            case Abs(x, b):
                x2 = pick(x)
                return Abs(x2, go(b, {**env, x: x2}))
            case App(l, r):
                return App(go(l, env), go(r, env))
            case ESub(b, x, a):
                a2 = go(a, env)
                x2 = pick(x)
                return ESub(go(b, {**env, x: x2}), x2, a2)
        raise TypeError(f"not a term: {t!r}")

    return go(t, {})


def fresh_copy(t: Term, source: FreshSource) -> Term:
    """Copy t with every binder renamed to a fresh variable from `source`."""

    def go(t: Term, env: dict[Variable, Variable]) -> Term:
        match t:
            case Var(v):
                return Var(env.get(v, v))
            case Abs(x, b):
                x2 = source.fresh(x.base)
                return Abs(x2, go(b, {**env, x: x2}))
            case App(l, r):
                return App(go(l, env), go(r, env))
            case ESub(b, x, a):
                a2 = go(a, env)
                x2 = source.fresh(x.base)
                return ESub(go(b, {**env, x: x2}), x2, a2)
        raise TypeError(f"not a term: {t!r}")

    return go(t, {})


def binder_map(src: Term, dst: Term) -> dict[Variable, Variable]:
    """Binder correspondence between two alpha-equivalent terms."""
    out: dict[Variable, Variable] = {}

    def go(a: Term, b: Term) -> None:
        match a, b:
            case Var(_), Var(_):
                return
            case Abs(x, ab), Abs(y, bb):
                if x != y:
                    out[x] = y
                go(ab, bb)
            case App(l1, r1), App(l2, r2):
                go(l1, l2)
                go(r1, r2)
            case ESub(b1, x, a1), ESub(b2, y, a2):
                if x != y:
                    out[x] = y
                go(b1, b2)
                go(a1, a2)
            case _:
                raise ValueError("terms are not alpha-equivalent")

    go(src, dst)
    return out


# ---------------------------------------------------------------------------
# Substitution contexts S ::= <> | S[x<-t]
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubstContext:
    """A stack of explicit substitution layers, outermost last."""

    layers: tuple[tuple[Variable, Term], ...] = ()

    def plug(self, t: Term) -> Term:
        for x, a in self.layers:
            t = ESub(t, x, a)
        return t

    def binders(self) -> frozenset[Variable]:
        return frozenset(x for x, _ in self.layers)

    def __len__(self) -> int:
        return len(self.layers)


def split_subst_context(t: Term) -> tuple[SubstContext, Term]:
    """Maximal outer chain of explicit substitutions and the first non-ES core."""
    layers: list[tuple[Variable, Term]] = []
    while isinstance(t, ESub):
        layers.append((t.binder, t.arg))
        t = t.body
    return SubstContext(tuple(reversed(layers))), t


# ---------------------------------------------------------------------------
# Evaluation contexts
# ---------------------------------------------------------------------------


class ContextTag(Enum):
    WEAK = "weak"
    CBN = "cbn"
    CBV = "cbv"
    NEED = "need"


class EvalContext:
    """One-hole contexts; the tag records which strategy grammar the value obeys."""


@dataclass(frozen=True)
class Hole(EvalContext):
    tag: ContextTag = ContextTag.WEAK


@dataclass(frozen=True)
class AppLeftCtx(EvalContext):
    ctx: EvalContext
    arg: Term
    tag: ContextTag = ContextTag.WEAK


@dataclass(frozen=True)
class AppRightCtx(EvalContext):
    fun: Term
    ctx: EvalContext
    tag: ContextTag = ContextTag.WEAK

    def __post_init__(self):
        if self.tag in (ContextTag.CBN, ContextTag.NEED):
            raise ValueError(f"application-argument contexts are not {self.tag.value} contexts")


@dataclass(frozen=True)
class ESubBodyCtx(EvalContext):
    ctx: EvalContext
    binder: Variable
    arg: Term
    tag: ContextTag = ContextTag.WEAK


@dataclass(frozen=True)
class ESubArgCtx(EvalContext):
    body: Term
    binder: Variable
    ctx: EvalContext
    tag: ContextTag = ContextTag.WEAK

    def __post_init__(self):
        if self.tag in (ContextTag.CBN, ContextTag.NEED):
            raise ValueError(f"substitution-argument contexts are not {self.tag.value} contexts")


@dataclass(frozen=True)
class NeedChainCtx(EvalContext):
    """Context E<<x>>[x<-E']: `outer` has its hole at the needed occurrence of var,
    the context's own hole continues inside the substitution via `inner`."""

    outer: EvalContext
    var: Variable
    inner: EvalContext
    tag: ContextTag = ContextTag.NEED

    def __post_init__(self):
        if self.tag is not ContextTag.NEED:
            raise ValueError("needed-variable chains only occur in call-by-need contexts")


def plug(ctx: EvalContext, t: Term) -> Term:
    """Textual hole replacement; capture is permitted by design."""
    match ctx:
        case Hole():
            return t
        case AppLeftCtx(c, a):
            return App(plug(c, t), a)
        case AppRightCtx(f, c):
            return App(f, plug(c, t))
        case ESubBodyCtx(c, x, a):
            return ESub(plug(c, t), x, a)
        case ESubArgCtx(b, x, c):
            return ESub(b, x, plug(c, t))
        case NeedChainCtx(o, x, i):
            return ESub(plug(o, Var(x)), x, plug(i, t))
    raise TypeError(f"not a context: {ctx!r}")


def captured_binders(ctx: EvalContext) -> frozenset[Variable]:
    """Binders whose scope contains the hole."""
    match ctx:
        case Hole():
            return frozenset()
        case AppLeftCtx(c, _) | AppRightCtx(_, c):
            return captured_binders(c)
        case ESubBodyCtx(c, x, _):
            return captured_binders(c) | {x}
        case ESubArgCtx(_, _, c):
            return captured_binders(c)
        case NeedChainCtx(_, _, i):
            return captured_binders(i)
    raise TypeError(f"not a context: {ctx!r}")


class CaptureError(Exception):
    """A free variable of the plugged term would be bound by the context."""

    def __init__(self, variable: Variable):
        self.variable = variable
        super().__init__(f"plugging would capture {variable.pretty()}")


def plug_capture_free(ctx: EvalContext, t: Term) -> Term:
    captured = captured_binders(ctx) & fv(t)
    if captured:
        raise CaptureError(min(captured))
    return plug(ctx, t)


def context_conforms(ctx: EvalContext, tag: ContextTag) -> bool:
    """Whether the context value belongs to the given strategy's grammar."""
    match ctx:
        case Hole():
            return True
        case AppLeftCtx(c, _):
            return context_conforms(c, tag)
        case ESubBodyCtx(c, _, _):
            return context_conforms(c, tag)
        case AppRightCtx(_, c) | ESubArgCtx(_, _, c):
            return tag in (ContextTag.WEAK, ContextTag.CBV) and context_conforms(c, tag)
        case NeedChainCtx(o, _, i):
            return tag is ContextTag.NEED and context_conforms(o, tag) and context_conforms(i, tag)
    raise TypeError(f"not a context: {ctx!r}")
