"""TLTL formulas over hyperrectangle predicates and their robustness.

Formulas are built from ``true``, region predicates, negation, conjunction,
disjunction, eventually (``F``) and always (``G``).  Robustness is tracked
incrementally along tree paths: every subformula gets a slot holding the
robustness of that subformula over the trajectory prefix seen so far.

Inside a temporal operator the operand is evaluated pointwise, one state at
a time; a temporal operator evaluated at a single state reduces to its
operand.  Non-temporal formulas at trajectory level are evaluated at the
most recent state.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "Predicate",
    "Formula",
    "RobustnessState",
    "FormulaSyntaxError",
    "UnknownRegionError",
    "parse_formula",
    "to_nnf",
    "predicate_robustness",
    "init_robustness",
    "update_robustness",
    "tltl_edge_cost",
    "capped",
    "trace_robustness",
    "pointwise_robustness",
    "subformulas",
]

INSIDE = "inside"
OUTSIDE = "outside"

TRUE = "true"
PRED = "predicate"
NOT = "not"
AND = "and"
OR = "or"
EVENTUALLY = "eventually"
ALWAYS = "always"

_ARITY = {TRUE: 0, PRED: 0, NOT: 1, AND: 2, OR: 2, EVENTUALLY: 1, ALWAYS: 1}


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownRegionError(KeyError):
    pass


@dataclass(frozen=True)
class Predicate:
    """Membership test for an axis-aligned box.

    ``inside`` is positive strictly inside the box, ``outside`` is its
    negation.  Non-cubic boxes are handled by rescaling every axis to the
    smallest halfwidth before taking the infinity norm.
    """

    name: str
    center: tuple[float, ...]
    halfwidths: tuple[float, ...]
    kind: str = INSIDE

    def __post_init__(self):
        if self.kind not in (INSIDE, OUTSIDE):
            raise ValueError(f"unknown predicate kind {self.kind!r}")
        if len(self.center) != len(self.halfwidths):
            raise ValueError("center and halfwidths differ in dimension")
        if any(not (h > 0) for h in self.halfwidths):
            raise ValueError(f"halfwidths of {self.name} must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "halfwidths", tuple(float(h) for h in self.halfwidths))

    @property
    def dim(self) -> int:
        return len(self.center)

    def negated(self) -> "Predicate":
        kind = OUTSIDE if self.kind == INSIDE else INSIDE
        return Predicate(self.name, self.center, self.halfwidths, kind)

    def evaluate(self, x: np.ndarray) -> np.ndarray | float:
        """Vectorised robustness over the last axis of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(
                f"predicate {self.name} is {self.dim}-D, got state of dimension {x.shape[-1]}"
            )
        hw = np.asarray(self.halfwidths)
        mu = hw.min()
        dist = np.max(np.abs(x - np.asarray(self.center)) * (mu / hw), axis=-1)
        rho = mu - dist
        return rho if self.kind == INSIDE else -rho


@dataclass(frozen=True)
class Formula:
    kind: str
    children: tuple["Formula", ...] = ()
    predicate: Predicate | None = None

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise ValueError(f"unknown formula kind {self.kind!r}")
        if len(self.children) != _ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {_ARITY[self.kind]} operand(s)")
        if (self.kind == PRED) != (self.predicate is not None):
            raise ValueError("predicate payload required exactly for predicate nodes")

    # constructors -----------------------------------------------------
    @staticmethod
    def true() -> "Formula":
        return Formula(TRUE)

    @staticmethod
    def atom(p: Predicate) -> "Formula":
        return Formula(PRED, (), p)

    def __invert__(self) -> "Formula":
        return Formula(NOT, (self,))

    def __and__(self, other: "Formula") -> "Formula":
        return Formula(AND, (self, other))

    def __or__(self, other: "Formula") -> "Formula":
        return Formula(OR, (self, other))

    def eventually(self) -> "Formula":
        return Formula(EVENTUALLY, (self,))

    def always(self) -> "Formula":
        return Formula(ALWAYS, (self,))

    def __str__(self) -> str:
        k = self.kind
        if k == TRUE:
            return "true"
        if k == PRED:
            p = self.predicate
            return f"in({p.name})" if p.kind == INSIDE else f"!in({p.name})"
        if k == NOT:
            return f"!{_wrap(self.children[0])}"
        if k == EVENTUALLY:
            return f"F {_wrap(self.children[0])}"
        if k == ALWAYS:
            return f"G {_wrap(self.children[0])}"
        op = " & " if k == AND else " | "
        return op.join(_wrap(c, parent=k) for c in self.children)

    @property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    @property
    def depth(self) -> int:
        return 1 + max((c.depth for c in self.children), default=0)


def _wrap(f: Formula, parent: str | None = None) -> str:
    # unary operators bind tighter than & and |; same-kind chains print flat
    if f.kind in (AND, OR) and f.kind != parent:
        return f"({f})"
    return str(f)


def subformulas(f: Formula) -> list[Formula]:
    """Postorder enumeration; the root is last."""
    out: list[Formula] = []

    def visit(g: Formula):
        for c in g.children:
            visit(c)
        out.append(g)

    visit(f)
    return out


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r"\s*(?:(?P<sym>[()!&|])|(?P<ident>[A-Za-z_][A-Za-z0-9_\-]*))")


def _tokenize(text: str) -> list[tuple[str, int]]:
    pos, tokens = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            bad = len(text[pos:]) - len(text[pos:].lstrip()) + pos
            raise FormulaSyntaxError(f"unexpected character {text[bad]!r}", bad)
        tok = m.group("sym") or m.group("ident")
        tokens.append((tok, m.start(m.lastindex)))
        pos = m.end()
    tokens.append(("<end>", len(text)))
    return tokens


class _Parser:
    # or  := and ('|' and)*
    # and := unary ('&' unary)*
    # unary := '!' unary | 'F' unary | 'G' unary | atom
    # atom := 'true' | 'in' '(' NAME ')' | '(' or ')'

    def __init__(self, text: str, regions: Mapping[str, Predicate]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.regions = regions

    def peek(self) -> str:
        return self.tokens[self.i][0]

    def pos(self) -> int:
        return self.tokens[self.i][1]

    def take(self, expected: str | None = None) -> str:
        tok = self.peek()
        if expected is not None and tok != expected:
            raise FormulaSyntaxError(f"expected {expected!r}, found {tok!r}", self.pos())
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.disjunction()
        if self.peek() != "<end>":
            raise FormulaSyntaxError(f"unexpected token {self.peek()!r}", self.pos())
        return f

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek() == "|":
            self.take()
            f = f | self.conjunction()
        return f

    def conjunction(self) -> Formula:
        f = self.unary()
        while self.peek() == "&":
            self.take()
            f = f & self.unary()
        return f

    def unary(self) -> Formula:
        tok = self.peek()
        if tok == "!":
            self.take()
            return ~self.unary()
        if tok == "F":
            self.take()
            return self.unary().eventually()
        if tok == "G":
            self.take()
            return self.unary().always()
        return self.atom()

    def atom(self) -> Formula:
        tok, pos = self.tokens[self.i]
        if tok == "true":
            self.take()
            return Formula.true()
        if tok == "in":
            self.take()
            self.take("(")
            name, npos = self.tokens[self.i]
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_\-]*", name):
                raise FormulaSyntaxError(f"expected region name, found {name!r}", npos)
            self.take()
            self.take(")")
            if name not in self.regions:
                raise UnknownRegionError(f"unknown region {name!r} at position {npos}")
            return Formula.atom(self.regions[name])
        if tok == "(":
            self.take()
            f = self.disjunction()
            self.take(")")
            return f
        raise FormulaSyntaxError(f"unexpected token {tok!r}", pos)


def parse_formula(
    text: str, regions: Mapping[str, Predicate], *, nnf: bool = True
) -> Formula:
    """Parse ``text`` and bind region names to predicates.

    Grammar: ``true``, ``in(NAME)``, ``!φ``, ``φ & φ``, ``φ | φ``, ``F φ``,
    ``G φ`` and parentheses.  Unary operators bind tightest, then ``&``,
    then ``|``.  The result is in negation normal form unless ``nnf`` is
    false.
    """
    f = _Parser(text, regions).parse()
    return to_nnf(f) if nnf else f


def to_nnf(f: Formula, negate: bool = False) -> Formula:
    """Push negations down to predicates.

    ``!true`` is the only negation that survives, since there is no
    ``false`` literal.
    """
    k = f.kind
    if k == NOT:
        return to_nnf(f.children[0], not negate)
    if k == TRUE:
        return ~f if negate else f
    if k == PRED:
        return Formula.atom(f.predicate.negated()) if negate else f
    kids = tuple(to_nnf(c, negate) for c in f.children)
    if negate:
        k = {AND: OR, OR: AND, EVENTUALLY: ALWAYS, ALWAYS: EVENTUALLY}[k]
    return Formula(k, kids)


# --------------------------------------------------------------------------
# robustness


def predicate_robustness(p: Predicate, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a single state vector")
    return float(p.evaluate(x))


def capped(rho: float) -> float:
    return min(rho, 0.0)


@dataclass(frozen=True)
class RobustnessState:
    """Per-subformula robustness of a trajectory prefix (postorder slots)."""

    values: tuple[float, ...]

    @property
    def root(self) -> float:
        return self.values[-1]

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class _Compiled:
    nodes: list[Formula] = field(default_factory=list)
    kids: list[tuple[int, ...]] = field(default_factory=list)


@lru_cache(maxsize=64)
def _compile(f: Formula) -> _Compiled:
    c = _Compiled()

    def visit(g: Formula) -> int:
        kids = tuple(visit(k) for k in g.children)
        c.nodes.append(g)
        c.kids.append(kids)
        return len(c.nodes) - 1

    visit(f)
    return c


def _pointwise_columns(c: _Compiled, X: np.ndarray, rho_max: float) -> list[np.ndarray]:
    cols: list[np.ndarray] = []
    for node, kids in zip(c.nodes, c.kids):
        k = node.kind
        if k == TRUE:
            cols.append(np.full(len(X), rho_max))
        elif k == PRED:
            cols.append(node.predicate.evaluate(X))
        elif k == NOT:
            cols.append(-cols[kids[0]])
        elif k == AND:
            cols.append(np.minimum(cols[kids[0]], cols[kids[1]]))
        elif k == OR:
            cols.append(np.maximum(cols[kids[0]], cols[kids[1]]))
        else:
            cols.append(cols[kids[0]])
    return cols


def _as_trace(x) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty segment")
    return X


def init_robustness(f: Formula, x0, rho_max: float = 1.0) -> RobustnessState:
    """Robustness slots for the single-state trajectory ``x0``."""
    X = _as_trace(x0)[:1]
    c = _compile(f)
    cols = _pointwise_columns(c, X, rho_max)
    return RobustnessState(tuple(float(col[0]) for col in cols))


def update_robustness(
    f: Formula, parent: RobustnessState, segment, rho_max: float = 1.0
) -> RobustnessState:
    """Extend ``parent`` by the states of ``segment``.

    ``segment`` excludes the state already accounted for in ``parent`` and
    ends at the new node's state.
    """
    X = _as_trace(segment)
    c = _compile(f)
    if len(parent.values) != len(c.nodes):
        raise ValueError("robustness state does not belong to this formula")
    cols = _pointwise_columns(c, X, rho_max)
    out: list[float] = []
    for i, (node, kids) in enumerate(zip(c.nodes, c.kids)):
        k = node.kind
        if k == EVENTUALLY:
            out.append(max(parent.values[i], float(cols[kids[0]].max())))
        elif k == ALWAYS:
            out.append(min(parent.values[i], float(cols[kids[0]].min())))
        elif k == AND:
            out.append(min(out[kids[0]], out[kids[1]]))
        elif k == OR:
            out.append(max(out[kids[0]], out[kids[1]]))
        elif k == NOT:
            out.append(-out[kids[0]])
        else:
            out.append(float(cols[i][-1]))
    return RobustnessState(tuple(out))


def tltl_edge_cost(f: Formula, parent: RobustnessState, child: RobustnessState) -> float:
    """Drop in capped root robustness from ``parent`` to ``child``.

    Summed along a path this telescopes to the capped robustness of the
    start state minus that of the whole path.
    """
    return capped(parent.root) - capped(child.root)


# --------------------------------------------------------------------------
# from-scratch evaluation, used as an oracle for the incremental monitor


def pointwise_robustness(f: Formula, x, rho_max: float = 1.0) -> float:
    x = np.asarray(x, dtype=float)
    k = f.kind
    if k == TRUE:
        return rho_max
    if k == PRED:
        return predicate_robustness(f.predicate, x)
    if k == NOT:
        return -pointwise_robustness(f.children[0], x, rho_max)
    if k in (EVENTUALLY, ALWAYS):
        return pointwise_robustness(f.children[0], x, rho_max)
    a, b = (pointwise_robustness(c, x, rho_max) for c in f.children)
    return min(a, b) if k == AND else max(a, b)


def trace_robustness(f: Formula, trace: Sequence, rho_max: float = 1.0) -> float:
    """Robustness of a whole sampled trajectory, computed directly."""
    X = _as_trace(trace)
    k = f.kind
    if k in (TRUE, PRED):
        return pointwise_robustness(f, X[-1], rho_max)
    if k == NOT:
        return -trace_robustness(f.children[0], X, rho_max)
    if k == EVENTUALLY:
        return max(pointwise_robustness(f.children[0], x, rho_max) for x in X)
    if k == ALWAYS:
        return min(pointwise_robustness(f.children[0], x, rho_max) for x in X)
    a, b = (trace_robustness(c, X, rho_max) for c in f.children)
    return min(a, b) if k == AND else max(a, b)
