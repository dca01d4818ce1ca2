"""Constructive derivation transformations.

Every operation here rebuilds derivation trees node by node, recomputing each
judgement from the premises, so the index bookkeeping (the exact +1/-1 per
step) emerges from the rule arithmetic rather than being patched in.  The
builder `build_tight` types the normal form tightly and folds subject
expansion backwards over the recorded trace; the resulting indices equal the
trace's step counts exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .derivations import Derivation, RuleName, SystemId, check, is_tight
from .evaluator import (
    CBN as S_CBN,
    CBV_LTR,
    NEED as S_NEED,
    DEFAULT_FUEL,
    ExpRedex,
    MultRedex,
    StepKind,
    StepWitness,
    StrategyId,
    StrategyKind,
    Trace,
    evaluate,
    is_normal,
    is_normal_cbv,
)
from .multitypes import (
    Arrow,
    Judgement,
    MultiType,
    NormalType,
    TypeContext,
    ctx_restrict,
    ctx_union,
    mt_union,
)
from .syntax import (
    Abs,
    App,
    AppLeftCtx,
    AppRightCtx,
    ESub,
    ESubArgCtx,
    ESubBodyCtx,
    EvalContext,
    Hole,
    NeedChainCtx,
    SubstContext,
    Term,
    Var,
    Variable,
    alpha_eq,
    binder_map,
    rename_term,
    split_subst_context,
)


class TransformError(Exception):
    """A derivation transformation hit an ill-formed input or a broken invariant."""


# ---------------------------------------------------------------------------
# Judgement-computing node constructors
# ---------------------------------------------------------------------------


def _j(ctx, subject, rhs, m, e) -> Judgement:
    return Judgement(ctx, subject, rhs, m, e)


def ax_node(sys: SystemId, x: Variable, rhs) -> Derivation:
    g = sys.grammar
    if sys is SystemId.CBN:
        ctx = TypeContext.of(g, {x: MultiType.of(rhs)})
    else:
        if sys is SystemId.NEED and rhs.is_empty:
            raise TransformError("need axioms may not introduce the empty multi type")
        ctx = TypeContext.of(g, {x: rhs})
    return Derivation(RuleName.AX, _j(ctx, Var(x), rhs, 0, 1))


def normal_node(sys: SystemId, subject: Term) -> Derivation:
    if not isinstance(subject, Abs):
        raise TransformError("the normal constant types abstractions only")
    return Derivation(RuleName.NORMAL, _j(TypeContext.empty(sys.grammar), subject, NormalType(sys.grammar), 0, 0))


def many_node(sys: SystemId, subject: Term, premises: tuple[Derivation, ...]) -> Derivation:
    g = sys.grammar
    if sys is not SystemId.CBN and not isinstance(subject, Abs):
        raise TransformError("many applies to abstractions only")
    if sys in (SystemId.NEED, SystemId.NEED_NAIVE) and not premises:
        raise TransformError("many requires a non-empty premise family")
    ctx = TypeContext.empty(g)
    m = e = 0
    els = []
    for p in premises:
        if not alpha_eq(p.subject, subject):
            raise TransformError("many premises must type the same subject")
        els.append(p.rhs)
        ctx = ctx_union(ctx, p.ctx)
        m += p.judgement.m
        e += p.judgement.e
    rule = RuleName.MANY_POS if sys is SystemId.NEED_NAIVE else RuleName.MANY
    ordered = tuple(sorted(premises, key=lambda p: p.rhs.key))
    return Derivation(rule, _j(ctx, subject, MultiType(g, tuple(els)), m, e), ordered)


def many_zero_node(subject: Term) -> Derivation:
    g = SystemId.NEED_NAIVE.grammar
    return Derivation(RuleName.MANY_ZERO, _j(TypeContext.empty(g), subject, MultiType.empty(g), 0, 0))


def fun_node(sys: SystemId, binder: Variable, premise: Derivation) -> Derivation:
    g = sys.grammar
    source = premise.ctx.get(binder)
    arrow = Arrow(g, source, premise.rhs)
    j = _j(
        ctx_restrict(premise.ctx, binder),
        Abs(binder, premise.subject),
        arrow,
        premise.judgement.m,
        premise.judgement.e,
    )
    return Derivation(RuleName.FUN, j, (premise,))


def app_node(sys: SystemId, p1: Derivation, p2: Derivation) -> Derivation:
    if sys is SystemId.CBN:
        arrow = p1.rhs
        if not isinstance(arrow, Arrow):
            raise TransformError("app function premise must have an arrow type")
    else:
        if not (isinstance(p1.rhs, MultiType) and len(p1.rhs) == 1 and isinstance(p1.rhs.elements[0], Arrow)):
            raise TransformError("app function premise must have a one-arrow multi type")
        arrow = p1.rhs.elements[0]
    if arrow.source != p2.rhs:
        raise TransformError("argument type must match the arrow source")
    if sys is SystemId.NEED and p2.rhs.is_empty:
        raise TransformError("need app requires a non-empty argument type")
    j = _j(
        ctx_union(p1.ctx, p2.ctx),
        App(p1.subject, p2.subject),
        arrow.target,
        p1.judgement.m + p2.judgement.m + 1,
        p1.judgement.e + p2.judgement.e,
    )
    return Derivation(RuleName.APP, j, (p1, p2))


def app_gc_node(sys: SystemId, p: Derivation, arg: Term) -> Derivation:
    if sys is not SystemId.NEED:
        raise TransformError("app_gc only exists in the need system")
    if not (isinstance(p.rhs, MultiType) and len(p.rhs) == 1 and isinstance(p.rhs.elements[0], Arrow)):
        raise TransformError("app_gc premise must have a one-arrow multi type")
    arrow = p.rhs.elements[0]
    if not arrow.source.is_empty:
        raise TransformError("app_gc requires an empty arrow source")
    j = _j(p.ctx, App(p.subject, arg), arrow.target, p.judgement.m + 1, p.judgement.e)
    return Derivation(RuleName.APP_GC, j, (p,))


def es_node(sys: SystemId, binder: Variable, p1: Derivation, p2: Derivation) -> Derivation:
    if p1.ctx.get(binder) != p2.rhs:
        raise TransformError("argument type must match the binder's use in the body")
    if sys is SystemId.NEED and p2.rhs.is_empty:
        raise TransformError("need es requires a non-empty argument type")
    j = _j(
        ctx_union(ctx_restrict(p1.ctx, binder), p2.ctx),
        ESub(p1.subject, binder, p2.subject),
        p1.rhs,
        p1.judgement.m + p2.judgement.m,
        p1.judgement.e + p2.judgement.e,
    )
    return Derivation(RuleName.ES, j, (p1, p2))


def es_gc_node(sys: SystemId, binder: Variable, p: Derivation, arg: Term) -> Derivation:
    if sys is not SystemId.NEED:
        raise TransformError("es_gc only exists in the need system")
    if not p.ctx.get(binder).is_empty:
        raise TransformError("es_gc requires the binder unused in the premise context")
    j = _j(p.ctx, ESub(p.subject, binder, arg), p.rhs, p.judgement.m, p.judgement.e)
    return Derivation(RuleName.ES_GC, j, (p,))


# ---------------------------------------------------------------------------
# Whole-derivation renaming
# ---------------------------------------------------------------------------


def rename_derivation(d: Derivation, mapping: dict[Variable, Variable]) -> Derivation:
    """Apply an injective variable renaming to every subject and context key."""
    if not mapping:
        return d
    j = d.judgement
    ctx = TypeContext(j.ctx.system, tuple((mapping.get(v, v), mt) for v, mt in j.ctx.bindings))
    new_j = Judgement(ctx, rename_term(j.subject, mapping), j.rhs, j.m, j.e)
    return Derivation(d.rule, new_j, tuple(rename_derivation(p, mapping) for p in d.premises))


# ---------------------------------------------------------------------------
# Splitting and merging of multiset-typed derivations
# ---------------------------------------------------------------------------


def split_derivation(
    d: Derivation, parts: tuple[MultiType, MultiType], sys: SystemId
) -> tuple[Derivation, Derivation]:
    """Split a multiset-typed derivation along rhs = N + O into two derivations
    of the same subject; contexts and indices sum back to the original."""
    n_part, o_part = parts
    if not isinstance(d.rhs, MultiType):
        raise TransformError("only multiset-typed derivations split")
    if mt_union(n_part, o_part) != d.rhs:
        raise TransformError("parts do not sum to the derivation's type")
    if sys is not SystemId.CBN and not isinstance(d.subject, Abs):
        raise TransformError(f"{sys.value} splitting applies to values only")
    if d.rule not in (RuleName.MANY, RuleName.MANY_POS):
        raise TransformError("splitting expects a multiset introduction at the root")
    if sys in (SystemId.NEED, SystemId.NEED_NAIVE) and (n_part.is_empty or o_part.is_empty):
        raise TransformError("need splittings require both parts non-empty")
    avail = list(d.premises)
    picked = []
    for ty in n_part.elements:
        for i, p in enumerate(avail):
            if p.rhs == ty:
                picked.append(avail.pop(i))
                break
        else:
            raise TransformError(f"no premise types {ty!r}")
    rest_types = MultiType(d.rhs.system, tuple(p.rhs for p in avail))
    if rest_types != o_part:
        raise TransformError("remaining premises do not realise the second part")
    return (
        many_node(sys, d.subject, tuple(picked)),
        many_node(sys, d.subject, tuple(avail)),
    )


def merge_derivations(d1: Derivation, d2: Derivation, sys: SystemId) -> Derivation:
    """Join two multiset-typed derivations of the same subject into one typing
    the union multitype, with union context and summed indices."""
    if not (isinstance(d1.rhs, MultiType) and isinstance(d2.rhs, MultiType)):
        raise TransformError("only multiset-typed derivations merge")
    if not alpha_eq(d1.subject, d2.subject):
        raise TransformError("merged derivations must type the same subject")
    if sys is not SystemId.CBN and not isinstance(d1.subject, Abs):
        raise TransformError(f"{sys.value} merging applies to values only")
    if d1.rule not in (RuleName.MANY, RuleName.MANY_POS) or d2.rule not in (RuleName.MANY, RuleName.MANY_POS):
        raise TransformError("merging expects multiset introductions at both roots")
    return many_node(sys, d1.subject, d1.premises + d2.premises)


# ---------------------------------------------------------------------------
# Walking a derivation along an evaluation context
# ---------------------------------------------------------------------------

_BODY_RULES = {RuleName.APP: 0, RuleName.APP_GC: 0, RuleName.ES: 0, RuleName.ES_GC: 0}


def _descend(d: Derivation, occ: EvalContext) -> tuple[int, EvalContext]:
    """Premise index holding the hole, plus the remaining context."""
    match occ:
        case AppLeftCtx(c, _):
            if d.rule not in (RuleName.APP, RuleName.APP_GC):
                raise TransformError(f"context expects an application rule, found {d.rule.value}")
            return 0, c
        case ESubBodyCtx(c, _, _):
            if d.rule not in (RuleName.ES, RuleName.ES_GC):
                raise TransformError(f"context expects a substitution rule, found {d.rule.value}")
            return 0, c
        case AppRightCtx(_, c):
            if d.rule is not RuleName.APP:
                raise TransformError(f"argument context expects the app rule, found {d.rule.value}")
            return 1, c
        case ESubArgCtx(_, _, c):
            if d.rule is not RuleName.ES:
                raise TransformError(f"argument context expects the es rule, found {d.rule.value}")
            return 1, c
        case NeedChainCtx(_, _, c):
            if d.rule is not RuleName.ES:
                raise TransformError(f"needed chains expect the es rule, found {d.rule.value}")
            return 1, c
    raise TransformError(f"not a proper context: {occ!r}")


def _rebuild(d: Derivation, sys: SystemId, idx: int, new_premise: Derivation) -> Derivation:
    subject = d.subject
    match d.rule:
        case RuleName.APP:
            ps = (new_premise, d.premises[1]) if idx == 0 else (d.premises[0], new_premise)
            return app_node(sys, *ps)
        case RuleName.APP_GC:
            return app_gc_node(sys, new_premise, subject.right)
        case RuleName.ES:
            ps = (new_premise, d.premises[1]) if idx == 0 else (d.premises[0], new_premise)
            return es_node(sys, subject.binder, *ps)
        case RuleName.ES_GC:
            return es_gc_node(sys, subject.binder, new_premise, subject.arg)
    raise TransformError(f"cannot rebuild rule {d.rule.value} along a context")


def occurrence_node(d: Derivation, occ: EvalContext) -> Derivation:
    """The sub-derivation at the hole (an axiom for variable occurrences)."""
    while not isinstance(occ, Hole):
        i, occ = _descend(d, occ)
        d = d.premises[i]
    return d


# ---------------------------------------------------------------------------
# Linear substitution and removal
# ---------------------------------------------------------------------------


def linear_substitute(
    sys: SystemId, d_ctx: Derivation, occurrence: EvalContext, d_arg: Derivation
) -> Derivation:
    """Replace the variable occurrence at `occurrence` by d_arg's subject.

    d_ctx types C<<x>> with the occurrence's axiom consuming exactly d_arg's
    type; the result types C<<t>> with summed contexts and indices
    (m + m', e + e' - 1): the axiom's exponential unit is spent.
    """
    if isinstance(occurrence, Hole):
        if d_ctx.rule is not RuleName.AX:
            raise TransformError("the substituted occurrence must be typed by an axiom")
        consumed = MultiType.of(d_ctx.rhs) if sys is SystemId.CBN else d_ctx.rhs
        given = MultiType.of(d_arg.rhs) if sys is SystemId.CBN else d_arg.rhs
        if consumed != given:
            raise TransformError("argument derivation does not match the consumed type")
        return d_arg
    i, sub = _descend(d_ctx, occurrence)
    return _rebuild(d_ctx, sys, i, linear_substitute(sys, d_ctx.premises[i], sub, d_arg))


def linear_remove(
    sys: SystemId,
    d: Derivation,
    occurrence: EvalContext,
    subterm: Term,
    var: Optional[Variable] = None,
) -> tuple[Derivation, Derivation]:
    """Inverse of linear substitution: extract the typing of the subterm at the
    occurrence and re-type the context with a variable there instead.

    Returns (derivation for the subterm, derivation for C<<var>>); the second
    gains var at the extracted type, and one exponential unit is paid back.
    """
    if var is None:
        from .syntax import FreshSource

        src = FreshSource(d.subject)
        var = src.fresh("x")
    if isinstance(occurrence, Hole):
        if not alpha_eq(d.subject, subterm):
            raise TransformError("occurrence does not hold the expected subterm")
        if sys is SystemId.CBN:
            return d, ax_node(sys, var, d.rhs)
        if not isinstance(d.rhs, MultiType):
            raise TransformError("removal at a multiset position expects a multi type")
        return d, ax_node(sys, var, d.rhs)
    i, sub = _descend(d, occurrence)
    extracted, new_premise = linear_remove(sys, d.premises[i], sub, subterm, var)
    return extracted, _rebuild(d, sys, i, new_premise)


# ---------------------------------------------------------------------------
# Substitution-context layers on the derivation side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Layer:
    rule: RuleName
    binder: Variable
    arg_term: Term
    arg_deriv: Optional[Derivation]


def _peel_layers(d: Derivation, count: int) -> tuple[list[_Layer], Derivation]:
    """Strip `count` explicit-substitution nodes, outermost first."""
    layers: list[_Layer] = []
    for _ in range(count):
        if d.rule is RuleName.ES:
            layers.append(_Layer(RuleName.ES, d.subject.binder, d.subject.arg, d.premises[1]))
            d = d.premises[0]
        elif d.rule is RuleName.ES_GC:
            layers.append(_Layer(RuleName.ES_GC, d.subject.binder, d.subject.arg, None))
            d = d.premises[0]
        else:
            raise TransformError(f"expected a substitution layer, found {d.rule.value}")
    return layers, d


def _wrap_layers(core: Derivation, layers: list[_Layer], sys: SystemId) -> Derivation:
    for layer in reversed(layers):
        if layer.rule is RuleName.ES:
            core = es_node(sys, layer.binder, core, layer.arg_deriv)
        else:
            core = es_gc_node(sys, layer.binder, core, layer.arg_term)
    return core


# ---------------------------------------------------------------------------
# Quantitative subject reduction
# ---------------------------------------------------------------------------


def _system_of(strategy: StrategyId) -> SystemId:
    return {
        StrategyKind.CBN: SystemId.CBN,
        StrategyKind.CBV: SystemId.CBV,
        StrategyKind.NEED: SystemId.NEED,
    }[strategy.kind]


def _check_need_rhs(d: Derivation, sys: SystemId) -> None:
    if sys is SystemId.NEED and isinstance(d.rhs, MultiType) and d.rhs.is_empty:
        raise TransformError("need transformations require a non-empty right-hand type")


def subject_reduce(d: Derivation, w: StepWitness, sys: SystemId) -> Derivation:
    """Carry a derivation of w.before across the step to one of w.after with
    the index matching the step kind decreased by exactly one."""
    if w.kind is StepKind.ERASING:
        raise TransformError("no reduction across erasing steps")
    if _system_of(w.strategy) is not sys:
        raise TransformError(f"{w.strategy!r} step cannot drive a {sys.value} derivation")
    _check_need_rhs(d, sys)
    if not alpha_eq(d.subject, w.before):
        raise TransformError("derivation does not type the step's source")
    return _reduce_at(d, w.context, w, sys)


def _reduce_at(d: Derivation, outer: EvalContext, w: StepWitness, sys: SystemId) -> Derivation:
    _check_need_rhs(d, sys)
    if isinstance(outer, Hole):
        return _reduce_root(d, w, sys)
    i, sub = _descend(d, outer)
    return _rebuild(d, sys, i, _reduce_at(d.premises[i], sub, w, sys))


def _reduce_root(d: Derivation, w: StepWitness, sys: SystemId) -> Derivation:
    redex = w.redex
    if isinstance(redex, MultRedex):
        return _reduce_multiplicative(d, redex, sys)
    return _reduce_exponential(d, redex, w, sys)


def _reduce_multiplicative(d: Derivation, redex: MultRedex, sys: SystemId) -> Derivation:
    if d.rule is RuleName.APP:
        left, right = d.premises
        layers, core = _peel_layers(left, len(redex.layers))
        if sys is SystemId.CBN:
            if core.rule is not RuleName.FUN:
                raise TransformError(f"expected a fun node under the redex, found {core.rule.value}")
            fun_premise = core.premises[0]
        else:
            if core.rule not in (RuleName.MANY, RuleName.MANY_POS) or len(core.premises) != 1:
                raise TransformError("expected a one-premise multiset node under the redex")
            fun = core.premises[0]
            if fun.rule is not RuleName.FUN:
                raise TransformError(f"expected a fun node under the redex, found {fun.rule.value}")
            fun_premise = fun.premises[0]
        new_core = es_node(sys, redex.binder, fun_premise, right)
        return _wrap_layers(new_core, layers, sys)
    if d.rule is RuleName.APP_GC:
        (left,) = d.premises
        layers, core = _peel_layers(left, len(redex.layers))
        if core.rule not in (RuleName.MANY, RuleName.MANY_POS) or len(core.premises) != 1:
            raise TransformError("expected a one-premise multiset node under the redex")
        fun = core.premises[0]
        if fun.rule is not RuleName.FUN:
            raise TransformError(f"expected a fun node under the redex, found {fun.rule.value}")
        new_core = es_gc_node(sys, redex.binder, fun.premises[0], redex.arg)
        return _wrap_layers(new_core, layers, sys)
    raise TransformError(f"multiplicative redex typed by {d.rule.value}")


def _retarget(d_arg: Derivation, copy: Term) -> Derivation:
    """Rename a derivation of the substitution content onto the fresh copy."""
    return rename_derivation(d_arg, binder_map(d_arg.subject, copy))


def _reduce_exponential(d: Derivation, redex: ExpRedex, w: StepWitness, sys: SystemId) -> Derivation:
    if d.rule is not RuleName.ES:
        raise TransformError(f"exponential redex typed by {d.rule.value}")
    body_d, arg_d = d.premises
    occ_ax = occurrence_node(body_d, redex.inner)
    if occ_ax.rule is not RuleName.AX:
        raise TransformError("the needed occurrence is not typed by an axiom")
    if sys is SystemId.CBN:
        consumed = occ_ax.rhs  # a linear type
        if arg_d.rule is not RuleName.MANY:
            raise TransformError("cbn substitution content must be typed by a multiset node")
        chosen = None
        rest = list(arg_d.premises)
        for i, p in enumerate(rest):
            if p.rhs == consumed:
                chosen = rest.pop(i)
                break
        if chosen is None:
            raise TransformError("no premise matches the consumed linear type")
        new_body = linear_substitute(sys, body_d, redex.inner, _retarget(chosen, w.copy))
        return es_node(sys, redex.var, new_body, many_node(sys, arg_d.subject, tuple(rest)))
    # cbv/need: the substitution context inside the content commutes outward
    consumed = occ_ax.rhs  # a multi type
    layers, core_v = _peel_layers(arg_d, len(redex.layers))
    if core_v.rule not in (RuleName.MANY, RuleName.MANY_POS):
        raise TransformError("substitution content core must be typed by a multiset node")
    remainder = core_v.rhs
    try:
        for ty in consumed.elements:
            remainder = remainder.remove(ty)
    except ValueError:
        raise TransformError("consumed type is not part of the substitution content's type") from None
    if remainder.is_empty:
        given, rest_d = core_v, None
    else:
        given, rest_d = split_derivation(core_v, (consumed, remainder), sys)
    new_body = linear_substitute(sys, body_d, redex.inner, _retarget(given, w.copy))
    if rest_d is None:
        if sys is SystemId.NEED:
            inner = es_gc_node(sys, redex.var, new_body, redex.content)
        else:
            inner = es_node(sys, redex.var, new_body, many_node(sys, redex.content, ()))
    else:
        inner = es_node(sys, redex.var, new_body, rest_d)
    return _wrap_layers(inner, layers, sys)


# ---------------------------------------------------------------------------
# Quantitative subject expansion
# ---------------------------------------------------------------------------


def subject_expand(d: Derivation, w: StepWitness, sys: SystemId) -> Derivation:
    """Pull a derivation of w.after back across the step to one of w.before with
    the index matching the step kind increased by exactly one."""
    if w.kind is StepKind.ERASING:
        raise TransformError("no expansion across erasing steps")
    if _system_of(w.strategy) is not sys:
        raise TransformError(f"{w.strategy!r} step cannot drive a {sys.value} derivation")
    _check_need_rhs(d, sys)
    if not alpha_eq(d.subject, w.after):
        raise TransformError("derivation does not type the step's target")
    return _expand_at(d, w.context, w, sys)


def _expand_at(d: Derivation, outer: EvalContext, w: StepWitness, sys: SystemId) -> Derivation:
    _check_need_rhs(d, sys)
    if isinstance(outer, Hole):
        return _expand_root(d, w, sys)
    i, sub = _descend(d, outer)
    return _rebuild(d, sys, i, _expand_at(d.premises[i], sub, w, sys))


def _expand_root(d: Derivation, w: StepWitness, sys: SystemId) -> Derivation:
    redex = w.redex
    if isinstance(redex, MultRedex):
        return _expand_multiplicative(d, redex, sys)
    return _expand_exponential(d, redex, w, sys)


def _expand_multiplicative(d: Derivation, redex: MultRedex, sys: SystemId) -> Derivation:
    layers, core = _peel_layers(d, len(redex.layers))
    if core.rule is RuleName.ES:
        if core.subject.binder != redex.binder:
            raise TransformError("substitution binder does not match the contracted redex")
        body_d, arg_d = core.premises
        if sys is SystemId.CBN:
            left = _wrap_layers(fun_node(sys, redex.binder, body_d), layers, sys)
            return app_node(sys, left, arg_d)
        fun = fun_node(sys, redex.binder, body_d)
        left = _wrap_layers(many_node(sys, fun.subject, (fun,)), layers, sys)
        return app_node(sys, left, arg_d)
    if core.rule is RuleName.ES_GC:
        if sys is not SystemId.NEED:
            raise TransformError("es_gc outside the need system")
        (body_d,) = core.premises
        fun = fun_node(sys, redex.binder, body_d)
        left = _wrap_layers(many_node(sys, fun.subject, (fun,)), layers, sys)
        return app_gc_node(sys, left, redex.arg)
    raise TransformError(f"expected a substitution node for the contractum, found {core.rule.value}")


def _expand_exponential(d: Derivation, redex: ExpRedex, w: StepWitness, sys: SystemId) -> Derivation:
    if sys is SystemId.CBN:
        if d.rule is not RuleName.ES:
            raise TransformError(f"exponential contractum typed by {d.rule.value}")
        body_d, arg_d = d.premises
        if arg_d.rule is not RuleName.MANY:
            raise TransformError("cbn substitution content must be typed by a multiset node")
        extracted, ctx_d = linear_remove(sys, body_d, redex.inner, w.copy, redex.var)
        back = _retarget(extracted, redex.content)
        new_arg = many_node(sys, redex.content, arg_d.premises + (back,))
        return es_node(sys, redex.var, ctx_d, new_arg)
    layers, core = _peel_layers(d, len(redex.layers))
    if core.rule is RuleName.ES:
        if core.subject.binder != redex.var:
            raise TransformError("substitution binder does not match the contracted redex")
        body_d, arg_d = core.premises
    elif core.rule is RuleName.ES_GC:
        if sys is not SystemId.NEED:
            raise TransformError("es_gc outside the need system")
        if core.subject.binder != redex.var:
            raise TransformError("substitution binder does not match the contracted redex")
        body_d, arg_d = core.premises[0], None
    else:
        raise TransformError(f"expected a substitution node for the contractum, found {core.rule.value}")
    extracted, ctx_d = linear_remove(sys, body_d, redex.inner, w.copy, redex.var)
    back = _retarget(extracted, redex.content)
    total = back if arg_d is None else merge_derivations(back, arg_d, sys)
    content_d = _wrap_layers(total, layers, sys)
    return es_node(sys, redex.var, ctx_d, content_d)


# ---------------------------------------------------------------------------
# Tight typing of normal forms and the end-to-end builder
# ---------------------------------------------------------------------------


def tight_type_normal(t: Term, sys: SystemId) -> Derivation:
    """The canonical tight derivation of a normal form, at indices (0, 0)."""
    if sys is SystemId.NEED_NAIVE:
        raise ValueError("the naive system is check-only; no tight builder")
    if sys is SystemId.CBV:
        if not is_normal_cbv(t):
            raise ValueError("term is not a cbv normal form")
        layers, core = split_subst_context(t)
        d = many_node(sys, core, ())
        for x, a in layers.layers:
            d = es_node(sys, x, d, tight_type_normal(a, sys))
        return d
    if not is_normal(t):
        raise ValueError("term is not a normal form")
    layers, core = split_subst_context(t)
    if sys is SystemId.CBN:
        d = normal_node(sys, core)
        for x, a in layers.layers:
            d = es_node(sys, x, d, many_node(sys, a, ()))
        return d
    d = many_node(sys, core, (normal_node(sys, core),))
    for x, a in layers.layers:
        d = es_gc_node(sys, x, d, a)
    return d


@dataclass(frozen=True)
class BuildResult:
    derivation: Optional[Derivation]
    trace: Trace

    @property
    def built(self) -> bool:
        return self.derivation is not None


def strategy_for(sys: SystemId) -> StrategyId:
    if sys is SystemId.CBN:
        return S_CBN
    if sys is SystemId.CBV:
        return CBV_LTR
    if sys is SystemId.NEED:
        return S_NEED
    raise ValueError("the naive system has no evaluation strategy")


def build_tight(t: Term, sys: SystemId, fuel: int = DEFAULT_FUEL) -> BuildResult:
    """Evaluate, tightly type the normal form, and expand backwards over the
    trace; the built derivation's indices equal the trace counts exactly."""
    if sys is SystemId.NEED_NAIVE:
        raise ValueError("the naive system is check-only; no tight builder")
    result = evaluate(t, strategy_for(sys), fuel)
    if not result.normalized:
        return BuildResult(None, result.trace)
    d = tight_type_normal(result.final, sys)
    for step in reversed(result.trace.steps):
        d = subject_expand(d, step.witness, sys)
    report = check(d, sys)
    if not report.ok:
        raise TransformError(f"built derivation fails its own check: {report.verdict}")
    if not is_tight(d, sys):
        raise TransformError("built derivation is not tight")
    return BuildResult(d, result.trace)
