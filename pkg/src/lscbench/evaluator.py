"""Micro-step operational semantics for the three weak strategies.

Root steps (S a substitution context, v an abstraction):

  multiplicative          S<\\x.t> s          -->  S<t[x<-s]>
  exponential, cbn        C<<x>>[x<-t]        -->  C<<t>>[x<-t]
  exponential, cbv/need   E<<x>>[x<-S<v>]     -->  S<E<<v>>[x<-v]>

each closed under the strategy's evaluation contexts.  Exponential steps plug
a freshly renamed copy of the substituted term, preserving the distinct-binder
discipline.  cbn and need are deterministic; cbv is non-deterministic and is
run through a fixed redex-choice policy (left-to-right by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union

from .syntax import (
    Abs,
    App,
    AppLeftCtx,
    AppRightCtx,
    ContextTag,
    ESub,
    ESubArgCtx,
    ESubBodyCtx,
    EvalContext,
    FreshSource,
    Hole,
    NeedChainCtx,
    SubstContext,
    Term,
    Var,
    Variable,
    alpha_key,
    fresh_copy,
    fv,
    plug,
    rename_fresh,
    split_subst_context,
)


class StrategyKind(Enum):
    CBN = "cbn"
    CBV = "cbv"
    NEED = "need"


class CbvOrder(Enum):
    LEFT_TO_RIGHT = "ltr"
    RIGHT_TO_LEFT = "rtl"
    EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class StrategyId:
    kind: StrategyKind
    cbv_order: CbvOrder = CbvOrder.LEFT_TO_RIGHT

    @property
    def deterministic(self) -> bool:
        return self.kind is not StrategyKind.CBV or self.cbv_order is not CbvOrder.EXHAUSTIVE

    @property
    def context_tag(self) -> ContextTag:
        return {
            StrategyKind.CBN: ContextTag.CBN,
            StrategyKind.CBV: ContextTag.CBV,
            StrategyKind.NEED: ContextTag.NEED,
        }[self.kind]

    def __repr__(self):
        if self.kind is StrategyKind.CBV:
            return f"cbv({self.cbv_order.value})"
        return self.kind.value


CBN = StrategyId(StrategyKind.CBN)
CBV_LTR = StrategyId(StrategyKind.CBV, CbvOrder.LEFT_TO_RIGHT)
CBV_RTL = StrategyId(StrategyKind.CBV, CbvOrder.RIGHT_TO_LEFT)
NEED = StrategyId(StrategyKind.NEED)

DEFAULT_FUEL = 10_000


class StepKind(Enum):
    MULTIPLICATIVE = "multiplicative"
    EXPONENTIAL = "exponential"
    ERASING = "erasing"


# ---------------------------------------------------------------------------
# Root redexes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultRedex:
    """S<\\binder.body> arg at the root of the focused subterm."""

    layers: SubstContext
    binder: Variable
    body: Term
    arg: Term

    def root_term(self) -> Term:
        return App(self.layers.plug(Abs(self.binder, self.body)), self.arg)


@dataclass(frozen=True)
class ExpRedex:
    """inner<<var>>[var <- layers<content>] at the root of the focused subterm.

    For cbn the layers are empty and content is the whole substitution body;
    for cbv/need content is the value under the substitution context.
    """

    inner: EvalContext
    var: Variable
    layers: SubstContext
    content: Term

    def root_term(self) -> Term:
        return ESub(plug(self.inner, Var(self.var)), self.var, self.layers.plug(self.content))


RootRedex = Union[MultRedex, ExpRedex]


# ---------------------------------------------------------------------------
# Frames: spine descriptors used while searching for a redex
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _FAppLeft:
    arg: Term


@dataclass(frozen=True)
class _FAppRight:
    fun: Term


@dataclass(frozen=True)
class _FESubBody:
    binder: Variable
    arg: Term


@dataclass(frozen=True)
class _FESubArg:
    body: Term
    binder: Variable


@dataclass(frozen=True)
class _FChain:
    outer: tuple  # frames from the substitution node's body down to the needed occurrence
    var: Variable


def _ctx_of(frames: tuple, tag: ContextTag) -> EvalContext:
    if not frames:
        return Hole(tag)
    head, rest = frames[0], frames[1:]
    match head:
        case _FAppLeft(arg):
            return AppLeftCtx(_ctx_of(rest, tag), arg, tag)
        case _FAppRight(fun):
            return AppRightCtx(fun, _ctx_of(rest, tag), tag)
        case _FESubBody(binder, arg):
            return ESubBodyCtx(_ctx_of(rest, tag), binder, arg, tag)
        case _FESubArg(body, binder):
            return ESubArgCtx(body, binder, _ctx_of(rest, tag), tag)
        case _FChain(outer, var):
            return NeedChainCtx(_ctx_of(outer, tag), var, _ctx_of(rest, tag), tag)
    raise TypeError(f"bad frame {head!r}")


def context_path(ctx: EvalContext) -> str:
    """Compact position descriptor for trace rendering."""
    match ctx:
        case Hole():
            return ""
        case AppLeftCtx(c, _):
            return "l" + context_path(c)
        case AppRightCtx(_, c):
            return "r" + context_path(c)
        case ESubBodyCtx(c, _, _):
            return "b" + context_path(c)
        case ESubArgCtx(_, _, c):
            return "a" + context_path(c)
        case NeedChainCtx(_, _, c):
            return "a" + context_path(c)
    raise TypeError(f"not a context: {ctx!r}")


# ---------------------------------------------------------------------------
# Redex search
# ---------------------------------------------------------------------------


def _find_cbn(t: Term) -> Optional[tuple[tuple, RootRedex]]:
    frames: list = []
    cur = t
    while True:
        match cur:
            case App(l, r):
                layers, core = split_subst_context(l)
                if isinstance(core, Abs):
                    return tuple(frames), MultRedex(layers, core.binder, core.body, r)
                frames.append(_FAppLeft(r))
                cur = l
            case ESub(b, x, a):
                frames.append(_FESubBody(x, a))
                cur = b
            case Var(v):
                for i in range(len(frames) - 1, -1, -1):
                    f = frames[i]
                    if isinstance(f, _FESubBody) and f.binder == v:
                        inner = _ctx_of(tuple(frames[i + 1 :]), ContextTag.CBN)
                        return tuple(frames[:i]), ExpRedex(inner, v, SubstContext(), f.arg)
                return None
            case _:
                return None


def _find_need(t: Term) -> Optional[tuple[tuple, RootRedex]]:
    frames: list = []
    cur = t
    while True:
        match cur:
            case App(l, r):
                layers, core = split_subst_context(l)
                if isinstance(core, Abs):
                    return tuple(frames), MultRedex(layers, core.binder, core.body, r)
                frames.append(_FAppLeft(r))
                cur = l
            case ESub(b, x, a):
                frames.append(_FESubBody(x, a))
                cur = b
            case Var(v):
                hit = None
                for i in range(len(frames) - 1, -1, -1):
                    f = frames[i]
                    if isinstance(f, _FESubBody) and f.binder == v:
                        hit = i
                        break
                if hit is None:
                    return None
                content = frames[hit].arg
                layers, core = split_subst_context(content)
                if isinstance(core, Abs):
                    inner = _ctx_of(tuple(frames[hit + 1 :]), ContextTag.NEED)
                    return tuple(frames[:hit]), ExpRedex(inner, v, layers, core)
                # the substitution body is not yet a value: evaluation moves
                # inside it through the chain production E<<x>>[x<-E']
                chain = _FChain(tuple(frames[hit + 1 :]), v)
                frames = list(frames[:hit]) + [chain]
                cur = content
            case _:
                return None


def _weak_var_positions(t: Term, v: Variable) -> Iterator[tuple]:
    """Frames of every weak-context occurrence of v in t (binders never shadow
    v under the distinct-binder discipline, but guard anyway)."""
    match t:
        case Var(w):
            if w == v:
                yield ()
        case App(l, r):
            for fs in _weak_var_positions(l, v):
                yield (_FAppLeft(r),) + fs
            for fs in _weak_var_positions(r, v):
                yield (_FAppRight(l),) + fs
        case ESub(b, x, a):
            if x != v:
                for fs in _weak_var_positions(b, v):
                    yield (_FESubBody(x, a),) + fs
            for fs in _weak_var_positions(a, v):
                yield (_FESubArg(b, x),) + fs
        case _:
            return


def _cbv_redexes(t: Term) -> Iterator[tuple[tuple, RootRedex]]:
    """All cbv redexes in a fixed pre-order."""

    def visit(cur: Term, frames: tuple) -> Iterator[tuple[tuple, RootRedex]]:
        match cur:
            case App(l, r):
                layers, core = split_subst_context(l)
                if isinstance(core, Abs):
                    yield frames, MultRedex(layers, core.binder, core.body, r)
                yield from visit(l, frames + (_FAppLeft(r),))
                yield from visit(r, frames + (_FAppRight(l),))
            case ESub(b, x, a):
                layers, core = split_subst_context(a)
                if isinstance(core, Abs):
                    for occ in _weak_var_positions(b, x):
                        inner = _ctx_of(occ, ContextTag.CBV)
                        yield frames, ExpRedex(inner, x, layers, core)
                yield from visit(b, frames + (_FESubBody(x, a),))
                yield from visit(a, frames + (_FESubArg(b, x),))
            case _:
                return

    yield from visit(t, ())


def find_redex(t: Term, strategy: StrategyId) -> Optional[tuple[EvalContext, RootRedex]]:
    """Locate the redex the strategy contracts next, if any.

    cbn and need have at most one redex per term; for cbv the choice policy
    picks among the weak-context redexes.
    """
    tag = strategy.context_tag
    if strategy.kind is StrategyKind.CBN:
        found = _find_cbn(t)
    elif strategy.kind is StrategyKind.NEED:
        found = _find_need(t)
    else:
        redexes = list(_cbv_redexes(t))
        if not redexes:
            return None
        if strategy.cbv_order is CbvOrder.RIGHT_TO_LEFT:
            frames, redex = redexes[-1]
        else:
            frames, redex = redexes[0]
        return _ctx_of(frames, tag), redex
    if found is None:
        return None
    frames, redex = found
    return _ctx_of(frames, tag), redex


# ---------------------------------------------------------------------------
# Applying root steps
# ---------------------------------------------------------------------------


def apply_redex(
    outer: EvalContext, redex: RootRedex, strategy: StrategyId, source: FreshSource
) -> tuple[Term, StepKind, Optional[Term]]:
    """Contract a located redex; returns (result, kind, renamed copy if any)."""
    if isinstance(redex, MultRedex):
        root = redex.layers.plug(ESub(redex.body, redex.binder, redex.arg))
        return plug(outer, root), StepKind.MULTIPLICATIVE, None
    copy = fresh_copy(redex.content, source)
    if strategy.kind is StrategyKind.CBN:
        root = ESub(plug(redex.inner, copy), redex.var, redex.content)
    else:
        # the substitution context commutes outside the rewritten node
        root = redex.layers.plug(
            ESub(plug(redex.inner, copy), redex.var, redex.content)
        )
    return plug(outer, root), StepKind.EXPONENTIAL, copy


@dataclass(frozen=True)
class StepWitness:
    """One contracted step, with enough structure to replay it on derivations."""

    before: Term
    after: Term
    kind: StepKind
    context: EvalContext
    redex: RootRedex
    copy: Optional[Term]
    strategy: StrategyId


def step(t: Term, strategy: StrategyId, source: Optional[FreshSource] = None) -> Optional[tuple[Term, StepKind]]:
    """One strategy step, or None when no redex exists (normal form for
    deterministic policies on closed terms)."""
    if not strategy.deterministic:
        raise ValueError("exhaustive cbv has no single step function; use all_successors_cbv")
    w = step_witness(t, strategy, source)
    return None if w is None else (w.after, w.kind)


def step_witness(
    t: Term, strategy: StrategyId, source: Optional[FreshSource] = None
) -> Optional[StepWitness]:
    if source is None:
        source = FreshSource(t)
    found = find_redex(t, strategy)
    if found is None:
        return None
    outer, redex = found
    after, kind, copy = apply_redex(outer, redex, strategy, source)
    return StepWitness(t, after, kind, outer, redex, copy, strategy)


# ---------------------------------------------------------------------------
# Normal form predicates
# ---------------------------------------------------------------------------


def is_normal(t: Term) -> bool:
    """Normal form predicate shared by cbn and need: an abstraction under a
    chain of explicit substitutions, arguments unconstrained."""
    match t:
        case Abs(_, _):
            return True
        case ESub(b, _, _):
            return is_normal(b)
        case _:
            return False


def is_normal_cbv(t: Term) -> bool:
    """cbv normal forms additionally require substitution arguments normal."""
    match t:
        case Abs(_, _):
            return True
        case ESub(b, _, a):
            return is_normal_cbv(b) and is_normal_cbv(a)
        case _:
            return False


# ---------------------------------------------------------------------------
# Erasing (garbage collection) steps
# ---------------------------------------------------------------------------


def gc_step(t: Term, strategy: StrategyId) -> Optional[Term]:
    """One erasing step under a weak context, or None.

    cbn/need erase t[x<-s] -> t when x is unused; cbv erases only values,
    t[x<-S<v>] -> S<t>, keeping the inner substitutions."""

    def visit(cur: Term) -> Optional[Term]:
        match cur:
            case ESub(b, x, a):
                if x not in fv(b):
                    if strategy.kind is StrategyKind.CBV:
                        layers, core = split_subst_context(a)
                        if isinstance(core, Abs):
                            return layers.plug(b)
                    else:
                        return b
                nb = visit(b)
                if nb is not None:
                    return ESub(nb, x, a)
                na = visit(a)
                if na is not None:
                    return ESub(b, x, na)
                return None
            case App(l, r):
                nl = visit(l)
                if nl is not None:
                    return App(nl, r)
                nr = visit(r)
                if nr is not None:
                    return App(l, nr)
                return None
            case _:
                return None

    return visit(t)


# ---------------------------------------------------------------------------
# Traces and the evaluation loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    kind: StepKind
    redex_path: str
    result: Term
    witness: Optional[StepWitness] = None


@dataclass(frozen=True)
class Trace:
    initial: Term
    steps: tuple[TraceStep, ...] = ()

    @property
    def m_count(self) -> int:
        return sum(1 for s in self.steps if s.kind is StepKind.MULTIPLICATIVE)

    @property
    def e_count(self) -> int:
        return sum(1 for s in self.steps if s.kind is StepKind.EXPONENTIAL)

    @property
    def gc_count(self) -> int:
        return sum(1 for s in self.steps if s.kind is StepKind.ERASING)

    @property
    def final(self) -> Term:
        return self.steps[-1].result if self.steps else self.initial

    @property
    def counts(self) -> tuple[int, int]:
        return (self.m_count, self.e_count)

    def witnesses(self) -> list[StepWitness]:
        return [s.witness for s in self.steps if s.witness is not None]


@dataclass(frozen=True)
class EvalResult:
    trace: Trace
    normalized: bool

    @property
    def final(self) -> Term:
        return self.trace.final


def evaluate(
    t: Term,
    strategy: StrategyId,
    fuel: int = DEFAULT_FUEL,
    gc: bool = False,
    source: Optional[FreshSource] = None,
) -> EvalResult:
    """Iterate the strategy until no redex remains or the fuel runs out.

    The input is renamed to the distinct-binder form first.  With gc enabled,
    erasing steps are applied eagerly after each strategy step (they do not
    consume fuel; each one strictly shrinks the term).
    """
    if not strategy.deterministic:
        raise ValueError("evaluate needs a deterministic policy")
    if source is None:
        source = FreshSource(t)
    cur = rename_fresh(t, source)
    steps: list[TraceStep] = []
    initial = cur

    def run_gc() -> None:
        nonlocal cur
        while (nxt := gc_step(cur, strategy)) is not None:
            steps.append(TraceStep(StepKind.ERASING, "", nxt, None))
            cur = nxt

    if gc:
        run_gc()
    for _ in range(fuel):
        w = step_witness(cur, strategy, source)
        if w is None:
            trace = Trace(initial, tuple(steps))
            pred = is_normal_cbv if strategy.kind is StrategyKind.CBV else is_normal
            return EvalResult(trace, pred(cur))
        steps.append(TraceStep(w.kind, context_path(w.context), w.after, w))
        cur = w.after
        if gc:
            run_gc()
    w = step_witness(cur, strategy, source)
    if w is None:
        trace = Trace(initial, tuple(steps))
        pred = is_normal_cbv if strategy.kind is StrategyKind.CBV else is_normal
        return EvalResult(trace, pred(cur))
    return EvalResult(Trace(initial, tuple(steps)), False)


# ---------------------------------------------------------------------------
# Non-determinism explorer
# ---------------------------------------------------------------------------


def all_successors_cbv(t: Term, source: Optional[FreshSource] = None) -> list[tuple[Term, StepKind]]:
    """Every term reachable from t by one cbv step under any context choice,
    deduplicated up to alpha."""
    if source is None:
        source = FreshSource(t)
    out: list[tuple[Term, StepKind]] = []
    seen = set()
    for frames, redex in _cbv_redexes(t):
        outer = _ctx_of(frames, ContextTag.CBV)
        after, kind, _ = apply_redex(outer, redex, CBV_LTR, source)
        key = (alpha_key(after), kind)
        if key not in seen:
            seen.add(key)
            out.append((after, kind))
    return out
