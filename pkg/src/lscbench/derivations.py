"""Typing derivations for the four rule systems and their validation.

A derivation is a finite tree of rule applications; `check` verifies that
every node instantiates a rule of the requested system exactly: context
arithmetic, right-hand-side shapes, index arithmetic, and side conditions.
Rejections pinpoint the first offending node in post-order (premises before
their node), as the path of premise indices from the root.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .multitypes import (
    Arrow,
    Judgement,
    LinearType,
    MultiType,
    NormalType,
    TypeContext,
    TypeSystem,
    ctx_restrict,
    ctx_union,
    mt_union,
)
from .syntax import Abs, App, ESub, Term, Var, alpha_eq


class SystemId(Enum):
    CBN = "cbn"
    CBV = "cbv"
    NEED = "need"
    NEED_NAIVE = "need-naive"

    @property
    def grammar(self) -> TypeSystem:
        if self is SystemId.CBN:
            return TypeSystem.CBN
        if self is SystemId.CBV:
            return TypeSystem.CBV
        return TypeSystem.NEED


class RuleName(Enum):
    AX = "ax"
    NORMAL = "normal"
    FUN = "fun"
    MANY = "many"
    APP = "app"
    APP_GC = "app_gc"
    ES = "es"
    ES_GC = "es_gc"
    MANY_ZERO = "many0"
    MANY_POS = "many_pos"


@dataclass(frozen=True)
class Derivation:
    rule: RuleName
    judgement: Judgement
    premises: tuple["Derivation", ...] = ()

    @property
    def subject(self) -> Term:
        return self.judgement.subject

    @property
    def rhs(self):
        return self.judgement.rhs

    @property
    def ctx(self) -> TypeContext:
        return self.judgement.ctx

    @property
    def indices(self) -> tuple[int, int]:
        return self.judgement.indices

    def node_at(self, path: tuple[int, ...]) -> "Derivation":
        d = self
        for i in path:
            d = d.premises[i]
        return d

    def nodes(self):
        for p in self.premises:
            yield from p.nodes()
        yield self


@dataclass(frozen=True)
class CheckReport:
    ok: bool
    path: Optional[tuple[int, ...]] = None
    reason: Optional[str] = None

    @property
    def verdict(self) -> str:
        return "Accepted" if self.ok else f"Rejected at [{'.'.join(map(str, self.path))}]: {self.reason}"


def conclusion(d: Derivation) -> Judgement:
    return d.judgement


# Rules legal per system.  ManyPos doubles as Many under need (same content),
# and Many as ManyPos under the naive system.
_LEGAL: dict[SystemId, frozenset[RuleName]] = {
    SystemId.CBN: frozenset({RuleName.AX, RuleName.NORMAL, RuleName.FUN, RuleName.MANY, RuleName.APP, RuleName.ES}),
    SystemId.CBV: frozenset({RuleName.AX, RuleName.FUN, RuleName.MANY, RuleName.APP, RuleName.ES}),
    SystemId.NEED: frozenset(
        {
            RuleName.AX,
            RuleName.NORMAL,
            RuleName.FUN,
            RuleName.MANY,
            RuleName.MANY_POS,
            RuleName.APP,
            RuleName.APP_GC,
            RuleName.ES,
            RuleName.ES_GC,
        }
    ),
    SystemId.NEED_NAIVE: frozenset(
        {
            RuleName.AX,
            RuleName.NORMAL,
            RuleName.FUN,
            RuleName.MANY_ZERO,
            RuleName.MANY_POS,
            RuleName.MANY,
            RuleName.APP,
            RuleName.ES,
        }
    ),
}

_ARITY = {
    RuleName.AX: 0,
    RuleName.NORMAL: 0,
    RuleName.FUN: 1,
    RuleName.APP: 2,
    RuleName.APP_GC: 1,
    RuleName.ES: 2,
    RuleName.ES_GC: 1,
    RuleName.MANY_ZERO: 0,
}


def _is_multi(x) -> bool:
    return isinstance(x, MultiType)


def _is_linear(x) -> bool:
    return isinstance(x, LinearType)


def _types_of_judgement(j: Judgement):
    yield j.rhs
    for _, mt in j.ctx.bindings:
        yield mt


def _check_node(d: Derivation, sys: SystemId) -> Optional[str]:
    """One rule instance; returns the violated clause, or None if fine."""
    j = d.judgement
    rule = d.rule
    grammar = sys.grammar

    if rule not in _LEGAL[sys]:
        return f"rule {rule.value} is not part of the {sys.value} system"
    for ty in _types_of_judgement(j):
        if ty.system is not grammar:
            return f"{ty.system.value} type used in a {sys.value} derivation"
    if rule in _ARITY and len(d.premises) != _ARITY[rule]:
        return f"rule {rule.value} takes {_ARITY[rule]} premise(s), got {len(d.premises)}"
    if j.m < 0 or j.e < 0:
        return "negative index"

    many_like = rule in (RuleName.MANY, RuleName.MANY_POS)

    if rule is RuleName.AX:
        if not isinstance(j.subject, Var):
            return "axiom subject must be a variable"
        x = j.subject.var
        if sys is SystemId.CBN:
            if not _is_linear(j.rhs):
                return "cbn axiom assigns a linear type"
            expected = TypeContext.of(grammar, {x: MultiType.of(j.rhs)})
        else:
            if not _is_multi(j.rhs):
                return "axiom assigns a multi type"
            if sys is SystemId.NEED and j.rhs.is_empty:
                return "need axioms may not introduce the empty multi type"
            expected = TypeContext.of(grammar, {x: j.rhs})
        if j.ctx != expected:
            return "axiom context must bind exactly its subject at its type"
        if j.indices != (0, 1):
            return "axiom indices must be (0, 1)"
        return None

    if rule is RuleName.NORMAL:
        if not isinstance(j.subject, Abs):
            return "the normal constant types abstractions only"
        if not isinstance(j.rhs, NormalType):
            return "normal rule assigns the normal constant"
        if not j.ctx.is_empty:
            return "normal rule requires an empty context"
        if j.indices != (0, 0):
            return "normal rule indices must be (0, 0)"
        return None

    if rule is RuleName.MANY_ZERO:
        if not _is_multi(j.rhs) or not j.rhs.is_empty:
            return "many0 assigns the empty multi type"
        if not j.ctx.is_empty:
            return "many0 requires an empty context"
        if j.indices != (0, 0):
            return "many0 indices must be (0, 0)"
        return None

    if many_like:
        if not _is_multi(j.rhs):
            return "many assigns a multi type"
        if sys is not SystemId.CBN and not isinstance(j.subject, Abs):
            return "many applies to abstractions only"
        if sys in (SystemId.NEED, SystemId.NEED_NAIVE) and not d.premises:
            return "many requires a non-empty premise family"
        got = []
        m = e = 0
        ctx = TypeContext.empty(grammar)
        for p in d.premises:
            if not alpha_eq(p.subject, j.subject):
                return "many premises must type the same subject"
            if not _is_linear(p.rhs):
                return "many premises assign linear types"
            got.append(p.rhs)
            ctx = ctx_union(ctx, p.ctx)
            m += p.judgement.m
            e += p.judgement.e
        if MultiType(grammar, tuple(got)) != j.rhs:
            return "many conclusion type must be the multiset of premise types"
        if j.ctx != ctx:
            return "many conclusion context must be the union of premise contexts"
        if j.indices != (m, e):
            return "many indices must be the componentwise premise sums"
        return None

    if rule is RuleName.FUN:
        if not isinstance(j.subject, Abs):
            return "fun subject must be an abstraction"
        x, body = j.subject.binder, j.subject.body
        (p,) = d.premises
        if not alpha_eq(p.subject, body):
            return "fun premise must type the abstraction body"
        source = p.ctx.get(x)
        if sys is SystemId.CBN:
            if not _is_linear(p.rhs):
                return "cbn fun premise assigns a linear type"
        else:
            if not _is_multi(p.rhs):
                return "fun premise assigns a multi type"
        if j.rhs != Arrow(grammar, source, p.rhs):
            return "fun conclusion must be ctx(binder) -> premise type"
        if j.ctx != ctx_restrict(p.ctx, x):
            return "fun conclusion context must drop the binder"
        if x in j.ctx.domain():
            return "binder escapes the abstraction"
        if j.indices != p.judgement.indices:
            return "fun preserves the indices"
        return None

    if rule is RuleName.APP:
        if not isinstance(j.subject, App):
            return "app subject must be an application"
        p1, p2 = d.premises
        if not alpha_eq(p1.subject, j.subject.left):
            return "app left premise must type the function part"
        if not alpha_eq(p2.subject, j.subject.right):
            return "app right premise must type the argument"
        if not _is_multi(p2.rhs):
            return "app argument premise assigns a multi type"
        if sys is SystemId.CBN:
            if not isinstance(p1.rhs, Arrow):
                return "app function premise must have an arrow type"
            arrow = p1.rhs
            if not _is_linear(j.rhs):
                return "cbn app assigns a linear type"
        else:
            if not (_is_multi(p1.rhs) and len(p1.rhs) == 1 and isinstance(p1.rhs.elements[0], Arrow)):
                return "app function premise must have a one-arrow multi type"
            arrow = p1.rhs.elements[0]
        if arrow.source != p2.rhs:
            return "argument type must match the arrow source"
        if arrow.target != j.rhs:
            return "conclusion type must match the arrow target"
        if sys is SystemId.NEED and p2.rhs.is_empty:
            return "need app requires a non-empty argument type"
        if j.ctx != ctx_union(p1.ctx, p2.ctx):
            return "app conclusion context must be the union of premise contexts"
        if j.m != p1.judgement.m + p2.judgement.m + 1 or j.e != p1.judgement.e + p2.judgement.e:
            return "app must add (1, 0) to the premise index sums"
        return None

    if rule is RuleName.APP_GC:
        if not isinstance(j.subject, App):
            return "app_gc subject must be an application"
        (p,) = d.premises
        if not alpha_eq(p.subject, j.subject.left):
            return "app_gc premise must type the function part"
        if not (_is_multi(p.rhs) and len(p.rhs) == 1 and isinstance(p.rhs.elements[0], Arrow)):
            return "app_gc premise must have a one-arrow multi type"
        arrow = p.rhs.elements[0]
        if not arrow.source.is_empty:
            return "app_gc requires an empty arrow source"
        if arrow.target != j.rhs:
            return "conclusion type must match the arrow target"
        if j.ctx != p.ctx:
            return "app_gc preserves the context"
        if j.m != p.judgement.m + 1 or j.e != p.judgement.e:
            return "app_gc must add (1, 0) to the premise indices"
        return None

    if rule is RuleName.ES:
        if not isinstance(j.subject, ESub):
            return "es subject must carry an explicit substitution"
        x = j.subject.binder
        p1, p2 = d.premises
        if not alpha_eq(p1.subject, j.subject.body):
            return "es left premise must type the substitution body"
        if not alpha_eq(p2.subject, j.subject.arg):
            return "es right premise must type the substitution argument"
        if not _is_multi(p2.rhs):
            return "es argument premise assigns a multi type"
        if p1.ctx.get(x) != p2.rhs:
            return "argument type must match the binder's use in the body"
        if sys is SystemId.NEED and p2.rhs.is_empty:
            return "need es requires a non-empty argument type"
        if p1.rhs != j.rhs:
            return "es preserves the right-hand type"
        if x in p2.ctx.domain():
            return "binder escapes into the substitution argument"
        if j.ctx != ctx_union(ctx_restrict(p1.ctx, x), p2.ctx):
            return "es conclusion context must be the union minus the binder"
        if x in j.ctx.domain():
            return "binder escapes the substitution"
        if j.m != p1.judgement.m + p2.judgement.m or j.e != p1.judgement.e + p2.judgement.e:
            return "es indices must be the componentwise premise sums"
        return None

    if rule is RuleName.ES_GC:
        if not isinstance(j.subject, ESub):
            return "es_gc subject must carry an explicit substitution"
        x = j.subject.binder
        (p,) = d.premises
        if not alpha_eq(p.subject, j.subject.body):
            return "es_gc premise must type the substitution body"
        if not p.ctx.get(x).is_empty:
            return "es_gc requires the binder unused in the premise context"
        if p.rhs != j.rhs:
            return "es_gc preserves the right-hand type"
        if j.ctx != p.ctx:
            return "es_gc preserves the context"
        if j.indices != p.judgement.indices:
            return "es_gc preserves the indices"
        return None

    return f"rule {d.rule.value} not recognised"


def check(d: Derivation, sys: SystemId) -> CheckReport:
    """Accepted iff every node instantiates a rule of sys exactly."""
    for i, p in enumerate(d.premises):
        sub = check(p, sys)
        if not sub.ok:
            return CheckReport(False, (i,) + sub.path, sub.reason)
    reason = _check_node(d, sys)
    if reason is not None:
        return CheckReport(False, (), reason)
    return CheckReport(True)


def recompute_indices(d: Derivation, sys: SystemId) -> tuple[int, int]:
    """Indices from the tree structure alone, ignoring the annotations."""
    subs = [recompute_indices(p, sys) for p in d.premises]
    m = sum(s[0] for s in subs)
    e = sum(s[1] for s in subs)
    if d.rule is RuleName.AX:
        return (0, 1)
    if d.rule in (RuleName.APP, RuleName.APP_GC):
        return (m + 1, e)
    return (m, e)


def is_tight(d: Derivation, sys: SystemId) -> bool:
    """Empty context and the distinguished conclusion type: the normal constant
    (cbn), the empty multi type (cbv), or the singleton [normal] (need)."""
    j = d.judgement
    if not j.ctx.is_empty:
        return False
    if sys is SystemId.CBN:
        return isinstance(j.rhs, NormalType)
    if sys is SystemId.CBV:
        return _is_multi(j.rhs) and j.rhs.is_empty
    return (
        _is_multi(j.rhs)
        and len(j.rhs) == 1
        and isinstance(j.rhs.elements[0], NormalType)
    )
