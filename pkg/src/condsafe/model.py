"""Core representation of integer transition systems.

Programs are multigraphs of locations whose edges carry conjunctions of
linear inequalities over the program variables V and their primed
post-state copies V'.  Every inequality is kept in the canonical form

    c_1*v_1 + ... + c_n*v_n + c_0 <= 0

with arbitrary-precision integer coefficients.  Strict inequalities,
`>=`/`>` and equalities are eliminated at construction time, so the rest
of the system only ever deals with non-strict `<=` rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import (
    DisequalityNotAllowedHere,
    EmptyConjunction,
    IncompleteValuation,
    ParseError,
)

Location = str


@dataclass(frozen=True, order=True)
class Var:
    """A program variable; `primed` distinguishes v' from v."""

    name: str
    primed: bool = False

    def prime(self) -> "Var":
        return Var(self.name, True)

    def unprime(self) -> "Var":
        return Var(self.name, False)

    def __str__(self) -> str:
        return self.name + "'" if self.primed else self.name


# A valuation assigns integers to variables (unprimed, or both when it
# describes an evaluation step over V and V').
Valuation = Mapping[Var, int]


def _tighten(coeffs: dict[Var, int], constant: int) -> tuple[tuple[tuple[Var, int], ...], int]:
    """Canonicalize: drop zero terms, divide by the coefficient gcd
    (tightening the constant over the integers), collapse variable-free
    rows to 0 <= 0 or 1 <= 0."""
    terms = {v: c for v, c in coeffs.items() if c != 0}
    if not terms:
        return (), (0 if constant <= 0 else 1)
    g = math.gcd(*terms.values())
    if g > 1:
        terms = {v: c // g for v, c in terms.items()}
        constant = math.ceil(constant / g)
    ordered = tuple(sorted(terms.items()))
    return ordered, constant


@dataclass(frozen=True)
class LinearConstraint:
    """An integer linear inequality in canonical `expr <= 0` form.

    `terms` is sorted by variable and free of zero coefficients;
    construction goes through :meth:`make`, which also divides out the
    coefficient gcd.  A variable-free row is the constant `0 <= 0`
    (true) or `1 <= 0` (false).
    """

    terms: tuple[tuple[Var, int], ...]
    constant: int

    @staticmethod
    def make(coeffs: Mapping[Var, int], constant: int) -> "LinearConstraint":
        terms, constant = _tighten(dict(coeffs), constant)
        return LinearConstraint(terms, constant)

    @property
    def coeffs(self) -> dict[Var, int]:
        return dict(self.terms)

    def variables(self) -> set[Var]:
        return {v for v, _ in self.terms}

    def is_true(self) -> bool:
        return not self.terms and self.constant <= 0

    def is_false(self) -> bool:
        return not self.terms and self.constant > 0

    def evaluate(self, valuation: Valuation) -> bool:
        """True iff the row holds under `valuation` (must cover all vars)."""
        total = self.constant
        for v, c in self.terms:
            if v not in valuation:
                raise IncompleteValuation(f"no value for {v}")
            total += c * valuation[v]
        return total <= 0

    def negate(self) -> "LinearConstraint":
        """Integer negation: not(e <= 0) is e >= 1, i.e. -e + 1 <= 0."""
        return LinearConstraint.make({v: -c for v, c in self.terms}, 1 - self.constant)

    def prime(self) -> "LinearConstraint":
        return LinearConstraint.make({v.prime(): c for v, c in self.terms}, self.constant)

    def unprime(self) -> "LinearConstraint":
        return LinearConstraint.make({v.unprime(): c for v, c in self.terms}, self.constant)

    def has_primed(self) -> bool:
        return any(v.primed for v, _ in self.terms)

    def sort_key(self):
        return (tuple((v.name, v.primed, c) for v, c in self.terms), self.constant)

    def __str__(self) -> str:
        """Grammar-compatible rendering with all terms positive:
        `-x - 5*i + 50 <= 0` prints as `50 <= x + 5*i`."""

        def side(parts: list[str]) -> str:
            return " + ".join(parts) if parts else "0"

        left: list[str] = []
        right: list[str] = []
        for v, c in self.terms:
            if c > 0:
                left.append(str(v) if c == 1 else f"{c}*{v}")
            else:
                right.append(str(v) if c == -1 else f"{-c}*{v}")
        if self.constant > 0:
            left.append(str(self.constant))
        elif self.constant < 0:
            right.append(str(-self.constant))
        return f"{side(left)} <= {side(right)}"


TRUE = LinearConstraint.make({}, 0)
FALSE = LinearConstraint.make({}, 1)


def normalize_relation(coeffs: Mapping[Var, int], constant: int, op: str) -> list[LinearConstraint]:
    """Normalize `expr op 0` (expr given by coeffs/constant) to canonical rows.

    Strict inequalities are tightened over the integers (`e < 0` becomes
    `e + 1 <= 0`), `>=`/`>` are flipped, and `=` splits into two rows.
    """
    flipped = {v: -c for v, c in coeffs.items()}
    if op == "<=":
        return [LinearConstraint.make(coeffs, constant)]
    if op == "<":
        return [LinearConstraint.make(coeffs, constant + 1)]
    if op == ">=":
        return [LinearConstraint.make(flipped, -constant)]
    if op == ">":
        return [LinearConstraint.make(flipped, 1 - constant)]
    if op == "=":
        return [LinearConstraint.make(coeffs, constant), LinearConstraint.make(flipped, -constant)]
    if op == "!=":
        raise DisequalityNotAllowedHere("disequality must be split into two transitions")
    raise ParseError(f"unknown relation {op!r}")


def evaluate_conjunction(rows: Iterable[LinearConstraint], valuation: Valuation) -> bool:
    return all(r.evaluate(valuation) for r in rows)


@dataclass(frozen=True)
class Clause:
    """A nonempty disjunction of linear inequalities (an assertion payload)."""

    literals: tuple[LinearConstraint, ...]

    def __post_init__(self):
        if not self.literals:
            raise EmptyConjunction("a clause needs at least one literal")

    @staticmethod
    def of(*literals: LinearConstraint) -> "Clause":
        return Clause(tuple(literals))

    def canonical(self) -> "Clause":
        """Sorted, deduplicated literal order; used for memo keys."""
        return Clause(tuple(sorted(set(self.literals), key=LinearConstraint.sort_key)))

    def evaluate(self, valuation: Valuation) -> bool:
        return any(lit.evaluate(valuation) for lit in self.literals)

    def has_primed(self) -> bool:
        return any(lit.has_primed() for lit in self.literals)

    def prime(self) -> "Clause":
        return Clause(tuple(lit.prime() for lit in self.literals))

    def __str__(self) -> str:
        return " || ".join(str(lit) for lit in self.literals)


def negate_conjunction(conj: Iterable[LinearConstraint]) -> Clause:
    """De Morgan over canonical rows: not(e1<=0 and ... and en<=0) is the
    clause (e1>=1 or ... or en>=1)."""
    rows = list(conj)
    if not rows:
        raise EmptyConjunction("cannot negate an empty conjunction")
    return Clause(tuple(r.negate() for r in rows))


@dataclass(frozen=True)
class Transition:
    """An edge of the program multigraph with a pure-conjunction relation."""

    id: str
    src: Location
    dst: Location
    relation: tuple[LinearConstraint, ...]

    @staticmethod
    def make(id: str, src: Location, dst: Location, relation: Iterable[LinearConstraint]) -> "Transition":
        return Transition(id, src, dst, tuple(relation))

    def relation_canonical(self) -> tuple[LinearConstraint, ...]:
        rows = {r for r in self.relation if not r.is_true()}
        return tuple(sorted(rows, key=LinearConstraint.sort_key))

    def conjoin(self, extra: Iterable[LinearConstraint], new_id: str | None = None) -> "Transition":
        rows = list(self.relation)
        for r in extra:
            if not r.is_true() and r not in rows:
                rows.append(r)
        return Transition(new_id or self.id, self.src, self.dst, tuple(rows))

    def __str__(self) -> str:
        rows = ", ".join(str(r) for r in self.relation) or "0 <= 0"
        return f"{self.id}: {self.src} -> {self.dst} {{ {rows} }}"


@dataclass(frozen=True)
class Program:
    """An integer transition system with a canonical start location."""

    vars: tuple[str, ...]
    locations: tuple[Location, ...]
    init_location: Location
    transitions: tuple[Transition, ...]

    def __post_init__(self):
        seen: set[str] = set()
        locs = set(self.locations)
        declared = set(self.vars)
        if self.init_location not in locs:
            raise ValueError(f"init location {self.init_location!r} not declared")
        for t in self.transitions:
            if t.id in seen:
                raise ValueError(f"duplicate transition id {t.id!r}")
            seen.add(t.id)
            if t.src not in locs or t.dst not in locs:
                raise ValueError(f"transition {t.id!r} uses undeclared location")
            for row in t.relation:
                for v in row.variables():
                    if v.name not in declared:
                        raise ValueError(f"transition {t.id!r} uses undeclared variable {v.name!r}")

    def variables(self) -> list[Var]:
        return [Var(n) for n in self.vars]

    def transition(self, tid: str) -> Transition:
        for t in self.transitions:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def has_transition(self, tid: str) -> bool:
        return any(t.id == tid for t in self.transitions)

    def outgoing(self, loc: Location) -> list[Transition]:
        return [t for t in self.transitions if t.src == loc]

    def incoming(self, loc: Location) -> list[Transition]:
        return [t for t in self.transitions if t.dst == loc]

    def replace_transition(self, tid: str, replacements: Iterable[Transition]) -> "Program":
        """New program with `tid` swapped for `replacements` (in place, in order)."""
        out: list[Transition] = []
        for t in self.transitions:
            if t.id == tid:
                out.extend(replacements)
            else:
                out.append(t)
        return Program(self.vars, self.locations, self.init_location, tuple(out))

    def with_extra(self, locations: Iterable[Location] = (), transitions: Iterable[Transition] = ()) -> "Program":
        return Program(
            self.vars,
            self.locations + tuple(l for l in locations if l not in self.locations),
            self.init_location,
            self.transitions + tuple(transitions),
        )

    def fresh_location(self, base: str) -> Location:
        name = base
        n = 0
        while name in self.locations:
            n += 1
            name = f"{base}_{n}"
        return name

    def fresh_transition_id(self, base: str) -> str:
        name = base
        n = 0
        while self.has_transition(name):
            n += 1
            name = f"{base}_{n}"
        return name


@dataclass(frozen=True)
class Assertion:
    """A requirement that `clause` holds right after `transition` fires.

    The clause ranges over unprimed variables; it is primed internally
    when checked against the transition's post-state.
    """

    transition: Transition
    clause: Clause

    def __post_init__(self):
        if self.clause.has_primed():
            raise ValueError("assertion clauses range over unprimed variables only")

    def key(self):
        return (
            self.transition.id,
            self.transition.src,
            self.transition.dst,
            self.transition.relation_canonical(),
            self.clause.canonical().literals,
        )

    def __str__(self) -> str:
        return f"({self.transition.id}, {self.clause})"
