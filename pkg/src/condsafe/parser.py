"""Parser and printer for the `.its` transition-system format.

Grammar (whitespace-insensitive, `#` starts a line comment)::

    program := ("var" ident+ ";")+ "init" ident ";" trans* assert*
    trans   := ident ":" ident "->" ident "{" constr ("," constr)* "}" ";"
    constr  := linexp rel linexp          rel in { <=, <, >=, >, = }
    linexp  := term (("+"|"-") term)*
    term    := int | [int "*"] ident ["'"]
    assert  := "assert" ident ":" clause ";"
    clause  := constr ("||" constr)*

The asserted ident may be a transition id or a location id; a location
assertion is desugared into a fresh exit transition.  `!=` is permitted
only inside assert clauses, where `a != b` contributes the two literals
`a < b` and `b < a` to the clause, and `=` inside an assert clause splits
the clause into two independently verified clauses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import DisequalityNotAllowedHere, ParseError, UnknownLocation
from .model import (
    Assertion,
    Clause,
    LinearConstraint,
    Program,
    Transition,
    Var,
    normalize_relation,
)

_KEYWORDS = {"var", "init", "assert"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'?)
  | (?P<op>\|\||->|<=|>=|!=|[<>=:;{},+\-*])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "int" | "ident" | "op" | "eof"
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = m.group(0)
        kind = m.lastgroup or ""
        if kind != "ws":
            tokens.append(Token(kind, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


@dataclass(frozen=True)
class AssertionSpec:
    """A raw assertion: clauses attached to a transition or a location."""

    target: str
    clauses: tuple[Clause, ...]
    at_location: bool


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise ParseError(message, tok.line, tok.col)

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text:
            self.fail(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok)
        return tok

    def expect_ident(self) -> Token:
        tok = self.next()
        if tok.kind != "ident" or tok.text in _KEYWORDS or tok.text.endswith("'"):
            self.fail(f"expected identifier, found {tok.text or 'end of input'!r}", tok)
        return tok

    # --- expressions -----------------------------------------------------

    def parse_linexp(self, declared: set[str], allow_primed: bool) -> tuple[dict[Var, int], int]:
        coeffs: dict[Var, int] = {}
        constant = 0
        sign = 1
        while True:
            tok = self.next()
            if tok.kind == "int":
                value = int(tok.text)
                if self.peek().text == "*":
                    self.next()
                    ident = self.next()
                    if ident.kind != "ident":
                        self.fail("expected variable after '*'", ident)
                    var = self._variable(ident, declared, allow_primed)
                    coeffs[var] = coeffs.get(var, 0) + sign * value
                else:
                    constant += sign * value
            elif tok.kind == "ident" and tok.text not in _KEYWORDS:
                var = self._variable(tok, declared, allow_primed)
                if self.peek().text == "*":
                    self.fail("nonlinear term: variable multiplied by an expression", self.peek())
                coeffs[var] = coeffs.get(var, 0) + sign
            else:
                self.fail(f"expected term, found {tok.text or 'end of input'!r}", tok)
            nxt = self.peek().text
            if nxt == "+":
                self.next()
                sign = 1
            elif nxt == "-":
                self.next()
                sign = -1
            else:
                return coeffs, constant

    def _variable(self, tok: Token, declared: set[str], allow_primed: bool) -> Var:
        primed = tok.text.endswith("'")
        name = tok.text[:-1] if primed else tok.text
        if primed and not allow_primed:
            self.fail("primed variable not allowed here", tok)
        if name not in declared:
            self.fail(f"undeclared variable {name!r}", tok)
        return Var(name, primed)

    def parse_constr(self, declared: set[str], allow_primed: bool, allow_diseq: bool):
        """Returns ("disj", literals) or ("conj", rows).

        `=` yields two conjoined rows; `!=` (assert clauses only) yields
        two disjoined literals; every other relation yields one literal.
        """
        lhs_coeffs, lhs_const = self.parse_linexp(declared, allow_primed)
        tok = self.next()
        if tok.text not in ("<=", "<", ">=", ">", "=", "!="):
            self.fail(f"expected relation, found {tok.text or 'end of input'!r}", tok)
        op = tok.text
        rhs_coeffs, rhs_const = self.parse_linexp(declared, allow_primed)
        coeffs = dict(lhs_coeffs)
        for v, c in rhs_coeffs.items():
            coeffs[v] = coeffs.get(v, 0) - c
        constant = lhs_const - rhs_const
        if op == "!=":
            if not allow_diseq:
                raise DisequalityNotAllowedHere(
                    "disequality not allowed in a transition relation", tok.line, tok.col
                )
            lt = normalize_relation(coeffs, constant, "<")
            gt = normalize_relation(coeffs, constant, ">")
            return ("disj", lt + gt)
        rows = normalize_relation(coeffs, constant, op)
        if op == "=":
            return ("conj", rows)
        return ("disj", rows)

    # --- program ---------------------------------------------------------

    def parse_program(self) -> tuple[Program, list[AssertionSpec]]:
        declared: list[str] = []
        if self.peek().text != "var":
            self.fail("program must start with a 'var' declaration")
        while self.peek().text == "var":
            self.next()
            names = [self.expect_ident().text]
            while self.peek().kind == "ident" and self.peek().text not in _KEYWORDS:
                names.append(self.expect_ident().text)
            self.expect(";")
            for n in names:
                if n in declared:
                    self.fail(f"variable {n!r} declared twice")
                declared.append(n)
        self.expect("init")
        init_loc = self.expect_ident().text
        self.expect(";")

        var_set = set(declared)
        transitions: list[Transition] = []
        tids: set[str] = set()
        locations: list[str] = [init_loc]

        def note_location(name: str):
            if name not in locations:
                locations.append(name)

        while self.peek().kind == "ident" and self.peek().text != "assert":
            tid_tok = self.expect_ident()
            if tid_tok.text in tids:
                self.fail(f"duplicate transition id {tid_tok.text!r}", tid_tok)
            self.expect(":")
            src = self.expect_ident().text
            self.expect("->")
            dst = self.expect_ident().text
            self.expect("{")
            rows: list[LinearConstraint] = []
            while True:
                kind, parts = self.parse_constr(var_set, allow_primed=True, allow_diseq=False)
                assert kind in ("disj", "conj")
                if kind == "disj" and len(parts) > 1:  # unreachable: no != here
                    self.fail("disjunction not allowed in a transition relation")
                rows.extend(parts)
                if self.peek().text == ",":
                    self.next()
                    continue
                break
            self.expect("}")
            self.expect(";")
            tids.add(tid_tok.text)
            note_location(src)
            note_location(dst)
            transitions.append(Transition.make(tid_tok.text, src, dst, rows))

        specs: list[AssertionSpec] = []
        while self.peek().text == "assert":
            self.next()
            target = self.expect_ident()
            self.expect(":")
            clauses = self.parse_clause(var_set)
            self.expect(";")
            if target.text in tids:
                specs.append(AssertionSpec(target.text, tuple(clauses), at_location=False))
            elif target.text in locations:
                specs.append(AssertionSpec(target.text, tuple(clauses), at_location=True))
            else:
                self.fail(f"assertion target {target.text!r} is neither a transition nor a location", target)

        tok = self.peek()
        if tok.kind != "eof":
            self.fail(f"unexpected {tok.text!r}", tok)
        program = Program(tuple(declared), tuple(locations), init_loc, tuple(transitions))
        return program, specs

    def parse_clause(self, declared: set[str]) -> list[Clause]:
        """Parse one assert clause into CNF (a list of independent clauses).

        Disjunctive contributions extend every accumulated clause; the two
        rows of an `=` distribute, doubling the clause list.
        """
        cnf: list[list[LinearConstraint]] = [[]]
        while True:
            kind, parts = self.parse_constr(declared, allow_primed=False, allow_diseq=True)
            if kind == "disj":
                for acc in cnf:
                    acc.extend(parts)
            else:
                cnf = [acc + [row] for row in parts for acc in cnf]
            if self.peek().text == "||":
                self.next()
                continue
            break
        return [Clause(tuple(acc)) for acc in cnf]


def parse_program(text: str) -> tuple[Program, list[AssertionSpec]]:
    """Parse `.its` source into a program and its raw assertions."""
    return _Parser(text).parse_program()


def desugar_location_assertion(program: Program, loc: str, clause: Clause) -> tuple[Program, Assertion]:
    """Turn `assert at location` into an exit-transition assertion.

    Adds a fresh location and a transition whose relation is v' = v for
    every program variable, so the clause (over unprimed variables) is
    checked against the values the location was reached with.
    """
    if loc not in program.locations:
        raise UnknownLocation(loc)
    new_loc = program.fresh_location(f"{loc}__assert")
    tid = program.fresh_transition_id(f"t__assert_{loc}")
    rows: list[LinearConstraint] = []
    for name in program.vars:
        rows.extend(normalize_relation({Var(name, True): 1, Var(name): -1}, 0, "="))
    t_star = Transition.make(tid, loc, new_loc, rows)
    extended = program.with_extra(locations=[new_loc], transitions=[t_star])
    return extended, Assertion(t_star, clause)


def resolve_assertions(program: Program, specs: list[AssertionSpec]) -> tuple[Program, list[Assertion]]:
    """Materialize raw assertion specs: desugar location assertions and
    split multi-clause specs into independently verified assertions."""
    assertions: list[Assertion] = []
    for spec in specs:
        if spec.at_location:
            program, first = desugar_location_assertion(program, spec.target, spec.clauses[0])
            assertions.append(first)
            for clause in spec.clauses[1:]:
                assertions.append(Assertion(first.transition, clause))
        else:
            t = program.transition(spec.target)
            for clause in spec.clauses:
                assertions.append(Assertion(t, clause))
    return program, assertions


def program_to_text(program: Program, specs: list[AssertionSpec] | None = None) -> str:
    """Render a program back to `.its` source (grammar-exact)."""
    lines = ["var " + " ".join(program.vars) + ";", f"init {program.init_location};"]
    for t in program.transitions:
        rows = ", ".join(str(r) for r in t.relation) or "0 <= 0"
        lines.append(f"{t.id}: {t.src} -> {t.dst} {{ {rows} }};")
    for spec in specs or []:
        for clause in spec.clauses:
            lines.append(f"assert {spec.target}: {clause};")
    return "\n".join(lines) + "\n"
