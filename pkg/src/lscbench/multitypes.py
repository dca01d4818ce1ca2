"""Linear types, multi types (multisets with canonical equality), type contexts.

Three grammars share the machinery:

  cbn   L ::= normal | M -> L          (arrow target is linear)
  cbv   L ::= M -> N                   (no normal constant)
  need  L ::= normal | M -> N

Multi types are finite multisets of linear types of one grammar; equality is
multiplicity-sensitive and order-insensitive, realised by keeping elements
sorted under a fixed total order.  The empty multi type is written 0 in the
literature; here it is MultiType.empty(system).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

from .syntax import Term, Variable


class TypeSystem(Enum):
    CBN = "cbn"
    CBV = "cbv"
    NEED = "need"


class SystemMismatch(TypeError):
    """Types or contexts from different systems were mixed."""


def _require_same(a: TypeSystem, b: TypeSystem) -> None:
    if a is not b:
        raise SystemMismatch(f"cannot mix {a.value} and {b.value} types")


class LinearType:
    system: TypeSystem
    _key: tuple

    @property
    def key(self) -> tuple:
        return self._key


@dataclass(frozen=True)
class NormalType(LinearType):
    """The constant typing normal terms; absent from the cbv grammar."""

    system: TypeSystem

    def __post_init__(self):
        if self.system is TypeSystem.CBV:
            raise SystemMismatch("the normal constant does not exist in the cbv grammar")
        object.__setattr__(self, "_key", (0,))

    def __repr__(self):
        return "normal"


@dataclass(frozen=True)
class Arrow(LinearType):
    """M -> T; the target is linear in cbn, a multi type in cbv and need."""

    system: TypeSystem
    source: "MultiType"
    target: Union[LinearType, "MultiType"]

    def __post_init__(self):
        _require_same(self.system, self.source.system)
        if self.system is TypeSystem.CBN:
            if not isinstance(self.target, LinearType):
                raise SystemMismatch("cbn arrows target a linear type")
        else:
            if not isinstance(self.target, MultiType):
                raise SystemMismatch(f"{self.system.value} arrows target a multi type")
        _require_same(self.system, self.target.system)
        object.__setattr__(self, "_key", (1, self.source.key, self.target.key))

    def __repr__(self):
        return f"({self.source!r} -> {self.target!r})"


@dataclass(frozen=True)
class MultiType:
    """Finite multiset of linear types, kept in canonical (sorted) order."""

    system: TypeSystem
    elements: tuple[LinearType, ...] = ()

    def __post_init__(self):
        for el in self.elements:
            _require_same(self.system, el.system)
        ordered = tuple(sorted(self.elements, key=lambda el: el.key))
        object.__setattr__(self, "elements", ordered)
        object.__setattr__(self, "_key", tuple(el.key for el in ordered))

    @staticmethod
    def empty(system: TypeSystem) -> "MultiType":
        return MultiType(system, ())

    @staticmethod
    def of(*elements: LinearType) -> "MultiType":
        if not elements:
            raise ValueError("use MultiType.empty(system) for the empty multi type")
        return MultiType(elements[0].system, tuple(elements))

    @property
    def key(self) -> tuple:
        return self._key

    @property
    def is_empty(self) -> bool:
        return not self.elements

    def __len__(self) -> int:
        return len(self.elements)

    def __repr__(self):
        return "[" + ", ".join(repr(el) for el in self.elements) + "]"

    def remove(self, el: LinearType) -> "MultiType":
        """Multiset difference by one occurrence."""
        els = list(self.elements)
        els.remove(el)
        return MultiType(self.system, tuple(els))


def mt_union(a: MultiType, b: MultiType) -> MultiType:
    _require_same(a.system, b.system)
    return MultiType(a.system, a.elements + b.elements)


def canonical_order(a: LinearType, b: LinearType) -> int:
    """Total order on linear types of one system: normal first, then arrows
    lexicographically by (source, target), multi types as sorted sequences."""
    _require_same(a.system, b.system)
    return (a.key > b.key) - (a.key < b.key)


@dataclass(frozen=True)
class TypeContext:
    """Finite map from variables to multi types; empty images are not stored."""

    system: TypeSystem
    bindings: tuple[tuple[Variable, MultiType], ...] = ()

    def __post_init__(self):
        kept = []
        seen = set()
        for v, mt in self.bindings:
            _require_same(self.system, mt.system)
            if v in seen:
                raise ValueError(f"duplicate binding for {v.pretty()}")
            seen.add(v)
            if not mt.is_empty:
                kept.append((v, mt))
        kept.sort(key=lambda item: (item[0].base, item[0].index))
        object.__setattr__(self, "bindings", tuple(kept))

    @staticmethod
    def empty(system: TypeSystem) -> "TypeContext":
        return TypeContext(system, ())

    @staticmethod
    def of(system: TypeSystem, mapping: dict[Variable, MultiType]) -> "TypeContext":
        return TypeContext(system, tuple(mapping.items()))

    def get(self, v: Variable) -> MultiType:
        for w, mt in self.bindings:
            if w == v:
                return mt
        return MultiType.empty(self.system)

    def domain(self) -> frozenset[Variable]:
        return frozenset(v for v, _ in self.bindings)

    @property
    def is_empty(self) -> bool:
        return not self.bindings

    def __repr__(self):
        inner = ", ".join(f"{v.pretty()}: {mt!r}" for v, mt in self.bindings)
        return "{" + inner + "}"


def ctx_union(g: TypeContext, p: TypeContext) -> TypeContext:
    _require_same(g.system, p.system)
    merged: dict[Variable, MultiType] = dict(g.bindings)
    for v, mt in p.bindings:
        merged[v] = mt_union(merged[v], mt) if v in merged else mt
    return TypeContext.of(g.system, merged)


def ctx_restrict(g: TypeContext, x: Variable) -> TypeContext:
    return TypeContext(g.system, tuple((v, mt) for v, mt in g.bindings if v != x))


def ctx_extend(g: TypeContext, x: Variable, mt: MultiType) -> TypeContext:
    """Disjoint extension: defined only when x is not already in the domain."""
    if x in g.domain():
        raise ValueError(f"{x.pretty()} already bound in context")
    return TypeContext(g.system, g.bindings + ((x, mt),))


Rhs = Union[LinearType, MultiType]


@dataclass(frozen=True)
class Judgement:
    """ctx |-(m, e) subject : rhs"""

    ctx: TypeContext
    subject: Term
    rhs: Rhs
    m: int
    e: int

    @property
    def indices(self) -> tuple[int, int]:
        return (self.m, self.e)


def same_judgement(a: Judgement, b: Judgement) -> bool:
    """Judgement equality with subjects compared up to alpha."""
    from .syntax import alpha_eq

    return (
        a.ctx == b.ctx
        and a.rhs == b.rhs
        and a.indices == b.indices
        and alpha_eq(a.subject, b.subject)
    )
