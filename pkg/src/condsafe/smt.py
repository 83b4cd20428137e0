"""SMT-LIB2 client: s-expression printer/parser and a solver subprocess.

The emitted subset is `(set-logic QF_NIA)`, `(set-option :timeout N)`
(best effort), `declare-fun` over Int/Bool, `assert` with
`+ - * <= >= = not or and ite`, `push`/`pop`, `check-sat` and
`get-model`.  Expressions are plain Python values: `int`, `str`
(symbols) and `tuple` (applications), so printing and parsing are a
round trip.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass
from queue import Empty, Queue
from typing import Iterable, Sequence

from .errors import BackendError, ProtocolError
from .model import Clause, LinearConstraint, Var

Sexp = int | str | tuple

SOLVER_ENV_VAR = "CONDSAFE_SOLVER"


# --- s-expressions -------------------------------------------------------


def to_text(expr: Sexp) -> str:
    if isinstance(expr, bool):
        return "true" if expr else "false"
    if isinstance(expr, int):
        return str(expr) if expr >= 0 else f"(- {-expr})"
    if isinstance(expr, str):
        return expr
    return "(" + " ".join(to_text(e) for e in expr) + ")"


def _tokenize_sexp(text: str) -> list[str]:
    out: list[str] = []
    cur: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
            continue
        if ch in "()":
            if cur:
                out.append("".join(cur))
                cur = []
            out.append(ch)
        elif ch.isspace():
            if cur:
                out.append("".join(cur))
                cur = []
        else:
            cur.append(ch)
        i += 1
    if cur:
        out.append("".join(cur))
    return out


def _atom(token: str) -> Sexp:
    if token.lstrip("-").isdigit() and token not in ("-", ""):
        return int(token)
    return token


def parse_all(text: str) -> list[Sexp]:
    """Parse a sequence of s-expressions; `(- 5)` folds back to -5."""
    tokens = _tokenize_sexp(text)
    stack: list[list[Sexp]] = [[]]
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ProtocolError("unbalanced ')' in solver output")
            done = stack.pop()
            if len(done) == 2 and done[0] == "-" and isinstance(done[1], int):
                stack[-1].append(-done[1])
            else:
                stack[-1].append(tuple(done))
        else:
            stack[-1].append(_atom(tok))
    if len(stack) != 1:
        raise ProtocolError("unbalanced '(' in solver output")
    return stack[0]


def parse_one(text: str) -> Sexp:
    exprs = parse_all(text)
    if len(exprs) != 1:
        raise ProtocolError(f"expected one s-expression, got {len(exprs)}")
    return exprs[0]


# --- expression builders -------------------------------------------------


def smt_sum(terms: Sequence[Sexp]) -> Sexp:
    if not terms:
        return 0
    if len(terms) == 1:
        return terms[0]
    return ("+",) + tuple(terms)


def smt_and(parts: Sequence[Sexp]) -> Sexp:
    parts = [p for p in parts if p != "true"]
    if not parts:
        return "true"
    if len(parts) == 1:
        return parts[0]
    return ("and",) + tuple(parts)


def smt_or(parts: Sequence[Sexp]) -> Sexp:
    if not parts:
        return "false"
    if len(parts) == 1:
        return parts[0]
    return ("or",) + tuple(parts)


def smt_not(part: Sexp) -> Sexp:
    return ("not", part)


def smt_implies(guard: Sexp, body: Sexp) -> Sexp:
    # The emitted subset has no `=>`; guarded constraints use (or (not g) b).
    return smt_or([smt_not(guard), body])


def smt_var(v: Var) -> str:
    return f"{v.name}.p" if v.primed else v.name


def smt_of_constraint(c: LinearConstraint, rename=smt_var) -> Sexp:
    """Canonical row as `(<= (+ (* c v) ... c0) 0)`."""
    terms: list[Sexp] = []
    for v, coeff in c.terms:
        name = rename(v)
        terms.append(name if coeff == 1 else ("*", coeff, name))
    if c.constant != 0 or not terms:
        terms.append(c.constant)
    return ("<=", smt_sum(terms), 0)


def smt_of_conjunction(rows: Iterable[LinearConstraint], rename=smt_var) -> Sexp:
    return smt_and([smt_of_constraint(r, rename) for r in rows])


def smt_of_clause(clause: Clause, rename=smt_var) -> Sexp:
    return smt_or([smt_of_constraint(lit, rename) for lit in clause.literals])


# --- solver process ------------------------------------------------------


@dataclass
class SolverStats:
    """Wall time spent waiting on check-sat, split by outcome; unknown
    (timeout) responses count toward the unsat bucket."""

    sat_s: float = 0.0
    unsat_s: float = 0.0
    queries: int = 0

    def add(self, outcome: str, seconds: float):
        self.queries += 1
        if outcome == "sat":
            self.sat_s += seconds
        else:
            self.unsat_s += seconds


def solver_command(spec: str | None = None) -> list[str]:
    """Resolve the solver command line from --solver or CONDSAFE_SOLVER.

    A bare `z3` or `cvc5` gets the flags it needs for interactive
    SMT-LIB2 on stdin.
    """
    raw = spec or os.environ.get(SOLVER_ENV_VAR)
    if not raw:
        raise BackendError(
            "no SMT solver configured; pass --solver or set " + SOLVER_ENV_VAR
        )
    cmd = shlex.split(raw)
    base = os.path.basename(cmd[0])
    if len(cmd) == 1:
        if base == "z3":
            cmd += ["-smt2", "-in"]
        elif base == "cvc5":
            cmd += ["--incremental", "--produce-models", "--force-logic=QF_NIA"]
    return cmd


class SolverHandle:
    """One interactive solver process; one in-flight query at a time.

    Commands are written as SMT-LIB2 text; every emitted command is kept
    in `transcript` so tests can re-parse what was sent.
    """

    def __init__(
        self,
        command: list[str],
        timeout_ms: int = 5000,
        stats: SolverStats | None = None,
    ):
        self.command = command
        self.timeout_ms = timeout_ms
        self.stats = stats if stats is not None else SolverStats()
        self.transcript: list[str] = []
        self._declared_ints: list[str] = []
        self._declared_bools: list[str] = []
        self._decl_marks: list[tuple[int, int]] = []
        self._dead = False
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise BackendError(f"cannot start solver {command!r}: {exc}") from exc
        self._lines: Queue[str | None] = Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self.send("(set-logic QF_NIA)")
        self.send(f"(set-option :timeout {timeout_ms})")

    def _pump(self):
        try:
            assert self._proc.stdout is not None
            for line in self._proc.stdout:
                self._lines.put(line.rstrip("\n"))
        except ValueError:
            pass
        finally:
            self._lines.put(None)

    # -- plumbing --

    def send(self, text: str):
        if self._dead:
            raise BackendError("solver process is gone")
        self.transcript.append(text)
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._dead = True
            raise BackendError(f"solver died while writing: {exc}") from exc

    def _read_line(self, deadline: float) -> str:
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.close()
                raise BackendError("solver did not answer within its time budget")
            try:
                line = self._lines.get(timeout=min(remaining, 0.5))
            except Empty:
                continue
            if line is None:
                self._dead = True
                raise BackendError("solver process closed its output")
            if line.strip():
                return line.strip()

    def _budget(self) -> float:
        # Generous wall budget: solver-side timeout plus slack for
        # process startup (the wasm build takes about a second).
        return time.monotonic() + self.timeout_ms / 1000.0 + 20.0

    # -- declarations and assertions --

    def declare_int(self, name: str):
        self._declared_ints.append(name)
        self.send(f"(declare-fun {name} () Int)")

    def declare_bool(self, name: str):
        self._declared_bools.append(name)
        self.send(f"(declare-fun {name} () Bool)")

    def assert_(self, expr: Sexp):
        self.send(f"(assert {to_text(expr)})")

    def push(self):
        self._decl_marks.append((len(self._declared_ints), len(self._declared_bools)))
        self.send("(push 1)")

    def pop(self):
        if self._decl_marks:
            ints, bools = self._decl_marks.pop()
            del self._declared_ints[ints:]
            del self._declared_bools[bools:]
        self.send("(pop 1)")

    # -- queries --

    def check_sat(self) -> str:
        """Returns "sat" | "unsat" | "unknown"; other lines (errors,
        `unsupported`) are collected and skipped."""
        deadline = self._budget()
        start = time.monotonic()
        self.send("(check-sat)")
        noise: list[str] = []
        while True:
            line = self._read_line(deadline)
            if line in ("sat", "unsat", "unknown"):
                self.stats.add(line, time.monotonic() - start)
                return line
            noise.append(line)
            if len(noise) > 50:
                raise ProtocolError(f"unrecognized solver output: {noise[:3]}")

    def get_model(self) -> dict[str, int | bool]:
        """Total model over all declared constants (absent entries are
        unconstrained and default to 0 / false)."""
        deadline = self._budget()
        self.send("(get-model)")
        chunks: list[str] = []
        depth = 0
        while True:
            line = self._read_line(deadline)
            if not chunks and not line.startswith("("):
                continue  # stray noise before the model
            chunks.append(line)
            depth += line.count("(") - line.count(")")
            if depth <= 0:
                break
        expr = parse_one("\n".join(chunks))
        if not isinstance(expr, tuple):
            raise ProtocolError(f"unexpected model shape: {expr!r}")
        entries = expr[1:] if expr and expr[0] == "model" else expr
        model: dict[str, int | bool] = {}
        for entry in entries:
            if not (isinstance(entry, tuple) and len(entry) >= 5 and entry[0] == "define-fun"):
                continue
            name, args, sort, value = entry[1], entry[2], entry[3], entry[4]
            if args != ():
                continue
            if sort == "Int":
                if not isinstance(value, int):
                    raise ProtocolError(f"non-integer value for {name}: {value!r}")
                model[str(name)] = value
            elif sort == "Bool":
                model[str(name)] = value == "true"
        for name in self._declared_ints:
            model.setdefault(name, 0)
        for name in self._declared_bools:
            model.setdefault(name, False)
        return model

    def close(self):
        if self._dead:
            return
        self._dead = True
        try:
            if self._proc.stdin:
                self._proc.stdin.write("(exit)\n")
                self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass
        try:
            self._proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            self._proc.kill()

    def __enter__(self) -> "SolverHandle":
        return self

    def __exit__(self, *exc):
        self.close()


def check(
    handle: SolverHandle,
    hard: Iterable[Sexp],
    assumptions: Iterable[Sexp] = (),
    int_decls: Iterable[str] = (),
    bool_decls: Iterable[str] = (),
) -> tuple[str, dict[str, int | bool] | None]:
    """One scoped satisfiability query: push, declare, assert, check, pop."""
    handle.push()
    try:
        for name in int_decls:
            handle.declare_int(name)
        for name in bool_decls:
            handle.declare_bool(name)
        for expr in hard:
            handle.assert_(expr)
        for expr in assumptions:
            handle.assert_(expr)
        outcome = handle.check_sat()
        model = handle.get_model() if outcome == "sat" else None
        return outcome, model
    finally:
        handle.pop()
