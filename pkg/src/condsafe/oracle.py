"""Independent ground truth: a bounded model checker and invariant checks.

Nothing here shares code with the proof engine's encoding.  The explicit
mode enumerates concrete states over a bounded value domain; the
symbolic mode unrolls the transition relation with one solver query per
depth.  Both are refuters: finding a violation is definitive, exhausting
the bound is not a proof.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import product

from .errors import BudgetExceeded
from .model import (
    Assertion,
    LinearConstraint,
    Program,
    Transition,
    Valuation,
    Var,
    evaluate_conjunction,
    negate_conjunction,
)
from .smt import (
    Sexp,
    SolverHandle,
    smt_and,
    smt_not,
    smt_of_clause,
    smt_of_constraint,
    smt_or,
)


@dataclass(frozen=True)
class Trace:
    """Alternating states and transition ids, starting at the initial
    location; the final step is the assertion's transition."""

    states: tuple[tuple[str, tuple[tuple[str, int], ...]], ...]
    steps: tuple[str, ...]

    def last_valuation(self) -> dict[Var, int]:
        return {Var(name): value for name, value in self.states[-1][1]}

    def length(self) -> int:
        return len(self.steps)

    def __str__(self) -> str:
        parts = []
        for i, (loc, vals) in enumerate(self.states):
            binding = ", ".join(f"{n}={v}" for n, v in vals)
            parts.append(f"({loc}: {binding})")
            if i < len(self.steps):
                parts.append(f"--{self.steps[i]}-->")
        return " ".join(parts)


@dataclass(frozen=True)
class BmcOutcome:
    counterexample: Trace | None
    depth_checked: int

    @property
    def found(self) -> bool:
        return self.counterexample is not None


def validate_trace(program: Program, assertion: Assertion, trace: Trace) -> bool:
    """Replay a trace against the program; used to double-check models."""
    if trace.states[0][0] != program.init_location:
        return False
    transitions = {t.id: t for t in program.transitions}
    for i, tid in enumerate(trace.steps):
        t = transitions[tid]
        (src, pre), (dst, post) = trace.states[i], trace.states[i + 1]
        if t.src != src or t.dst != dst:
            return False
        step_valuation: dict[Var, int] = {Var(n): v for n, v in pre}
        step_valuation.update({Var(n, True): v for n, v in post})
        if not evaluate_conjunction(t.relation, step_valuation):
            return False
    final = {Var(n): v for n, v in trace.states[-1][1]}
    return not assertion.clause.evaluate(final)


# --- explicit enumeration --------------------------------------------------


def _successors(
    t: Transition, pre: dict[str, int], names: tuple[str, ...], bound: int
):
    """Concrete post-valuations of `t` from `pre`.

    Single-variable rows give each primed variable an interval;
    unconstrained directions fall back to a window of width 2*bound
    anchored at the known side (or centered at zero for havoc).
    Remaining multi-variable rows filter the cross product.
    """
    base = {Var(n): v for n, v in pre.items()}
    residual: list[LinearConstraint] = []
    lo: dict[str, int | None] = {n: None for n in names}
    hi: dict[str, int | None] = {n: None for n in names}
    for row in t.relation:
        primed = [v for v in row.variables() if v.primed]
        if not primed:
            if not row.evaluate(base):
                return
            continue
        if len(primed) == 1:
            v = primed[0]
            coeff = row.coeffs[v]
            rest = row.constant + sum(
                c * base[u] for u, c in row.terms if not u.primed
            )
            # coeff * v' + rest <= 0
            if coeff > 0:
                limit = (-rest) // coeff  # v' <= floor(-rest / coeff)
                cur = hi[v.name]
                hi[v.name] = limit if cur is None else min(cur, limit)
            else:
                limit = -((-rest) // (-coeff))  # v' >= ceil(rest / -coeff)
                cur = lo[v.name]
                lo[v.name] = limit if cur is None else max(cur, limit)
            continue
        residual.append(row)
    ranges: list[range] = []
    for n in names:
        l, h = lo[n], hi[n]
        if l is None and h is None:
            l, h = -bound, bound
        elif l is None:
            l = h - 2 * bound
        elif h is None:
            h = l + 2 * bound
        if l > h:
            return
        ranges.append(range(l, h + 1))
    for combo in product(*ranges):
        post = dict(zip(names, combo))
        full = dict(base)
        full.update({Var(n, True): v for n, v in post.items()})
        if all(r.evaluate(full) for r in residual):
            yield post


def bmc_explicit(
    program: Program,
    assertion: Assertion,
    depth: int,
    value_bound: int,
    state_budget: int = 200_000,
) -> BmcOutcome:
    """Breadth-first enumeration of reachable states up to `depth` steps."""
    names = program.vars
    t_assert = assertion.transition
    initial = [
        dict(zip(names, combo))
        for combo in product(range(-value_bound, value_bound + 1), repeat=len(names))
    ]
    # parents: (loc, frozen valuation) -> (prev key, transition id)
    start_loc = program.init_location
    frontier: list[tuple[str, dict[str, int]]] = [(start_loc, v) for v in initial]
    seen = {(start_loc, tuple(sorted(v.items()))) for _, v in frontier}
    parent: dict = {key: None for key in seen}
    explored = 0

    def rebuild(loc: str, vals: dict[str, int], tid: str, post: dict[str, int]) -> Trace:
        states = [(t_assert.dst, tuple(sorted(post.items())))]
        steps = [tid]
        key = (loc, tuple(sorted(vals.items())))
        while key is not None:
            states.append(key)
            prev = parent[key]
            if prev is None:
                break
            key, step_id = prev
            steps.append(step_id)
        states.reverse()
        steps.reverse()
        return Trace(tuple(states), tuple(steps))

    for d in range(1, depth + 1):
        next_frontier: list[tuple[str, dict[str, int]]] = []
        for loc, vals in frontier:
            for t in program.outgoing(loc):
                for post in _successors(t, vals, names, value_bound):
                    explored += 1
                    if explored > state_budget:
                        raise BudgetExceeded(
                            f"explicit enumeration exceeded {state_budget} steps"
                        )
                    if t.id == t_assert.id:
                        post_valuation = {Var(n): v for n, v in post.items()}
                        if not assertion.clause.evaluate(post_valuation):
                            return BmcOutcome(rebuild(loc, vals, t.id, post), d)
                    key = (t.dst, tuple(sorted(post.items())))
                    if key not in seen:
                        seen.add(key)
                        parent[key] = ((loc, tuple(sorted(vals.items()))), t.id)
                        next_frontier.append((t.dst, post))
        frontier = next_frontier
        if not frontier:
            return BmcOutcome(None, depth)
    return BmcOutcome(None, depth)


# --- symbolic unrolling ------------------------------------------------------


def _step_var(name: str, i: int) -> str:
    return f"s{i}.{name}"


def _rename_at(i: int):
    def rename(v: Var) -> str:
        return _step_var(v.name, i + 1) if v.primed else _step_var(v.name, i)

    return rename


def bmc_symbolic(
    program: Program,
    assertion: Assertion,
    depth: int,
    value_bound: int,
    handle: SolverHandle,
) -> BmcOutcome:
    """One solver query per depth: does a violating trace of exactly that
    length exist?  Initial values and fully unconstrained (havoc) primed
    variables are bounded by `value_bound`."""
    names = program.vars
    t_assert = assertion.transition
    loc_index = {loc: i for i, loc in enumerate(program.locations)}
    tr_index = {t.id: i for i, t in enumerate(program.transitions)}

    def transition_step(t: Transition, i: int) -> Sexp:
        rename = _rename_at(i)
        parts: list[Sexp] = [
            ("=", f"loc{i}", loc_index[t.src]),
            ("=", f"loc{i + 1}", loc_index[t.dst]),
            ("=", f"step{i}", tr_index[t.id]),
        ]
        constrained = {v.name for row in t.relation for v in row.variables() if v.primed}
        for row in t.relation:
            parts.append(smt_of_constraint(row, rename))
        for name in names:
            if name not in constrained:
                nxt = _step_var(name, i + 1)
                parts.append(("<=", nxt, value_bound))
                parts.append((">=", nxt, -value_bound))
        return smt_and(parts)

    for d in range(1, depth + 1):
        handle.push()
        try:
            for i in range(d + 1):
                handle.declare_int(f"loc{i}")
                for name in names:
                    handle.declare_int(_step_var(name, i))
            for i in range(d):
                handle.declare_int(f"step{i}")
            handle.assert_(("=", "loc0", loc_index[program.init_location]))
            for name in names:
                handle.assert_(("<=", _step_var(name, 0), value_bound))
                handle.assert_((">=", _step_var(name, 0), -value_bound))
            for i in range(d - 1):
                handle.assert_(smt_or([transition_step(t, i) for t in program.transitions]))
            handle.assert_(transition_step(t_assert, d - 1))
            handle.assert_(smt_not(smt_of_clause(assertion.clause, _rename_at(d))))
            if handle.check_sat() == "sat":
                model = handle.get_model()
                states = []
                for i in range(d + 1):
                    loc_i = [l for l, idx in loc_index.items() if idx == model[f"loc{i}"]][0]
                    vals = tuple(sorted((n, int(model[_step_var(n, i)])) for n in names))
                    states.append((loc_i, vals))
                steps = []
                for i in range(d):
                    steps.append(
                        [tid for tid, idx in tr_index.items() if idx == model[f"step{i}"]][0]
                    )
                return BmcOutcome(Trace(tuple(states), tuple(steps)), d)
        finally:
            handle.pop()
    return BmcOutcome(None, depth)


def bmc(
    program: Program,
    assertion: Assertion,
    depth: int,
    value_bound: int,
    handle: SolverHandle | None = None,
    mode: str = "auto",
) -> BmcOutcome:
    """Bounded refutation search; `mode` is "explicit", "symbolic" or
    "auto" (symbolic when a solver handle is available)."""
    if mode == "explicit" or (mode == "auto" and handle is None):
        return bmc_explicit(program, assertion, depth, value_bound)
    if handle is None:
        raise ValueError("symbolic BMC needs a solver handle")
    return bmc_symbolic(program, assertion, depth, value_bound, handle)


# --- conditional invariant check ---------------------------------------------


def _implication_holds_solver(
    handle: SolverHandle,
    antecedent: list[LinearConstraint],
    consequent: list[LinearConstraint],
) -> bool:
    handle.push()
    try:
        for row in antecedent:
            handle.assert_(smt_of_constraint(row))
        handle.assert_(smt_of_clause(negate_conjunction(consequent)))
        return handle.check_sat() == "unsat"
    finally:
        handle.pop()


def _implication_holds_samples(
    antecedent: list[LinearConstraint],
    consequent: list[LinearConstraint],
    variables: list[Var],
    rng: random.Random,
    samples: int,
    spread: int = 6,
) -> bool:
    for _ in range(samples):
        valuation: Valuation = {v: rng.randint(-spread, spread) for v in variables}
        if evaluate_conjunction(antecedent, valuation) and not evaluate_conjunction(
            consequent, valuation
        ):
            return False
    return True


def check_conditional_invariant(
    component,
    entry_list,
    assertion: Assertion,
    invariant: dict[str, tuple[LinearConstraint, ...]],
    handle: SolverHandle,
    rng: random.Random | None = None,
    samples: int = 1000,
) -> bool:
    """True iff every consecution implication and the safety implication
    hold, each checked by a solver validity query plus random samples."""
    rng = rng or random.Random(0)

    def variables_of(rows: list[LinearConstraint]) -> list[Var]:
        out: set[Var] = set()
        for r in rows:
            out |= r.variables()
        return sorted(out)

    for t in component.transitions:
        antecedent = list(invariant.get(t.src, ())) + list(t.relation)
        consequent = [row.prime() for row in invariant.get(t.dst, ())]
        if not consequent:
            continue
        all_vars = variables_of(antecedent + consequent)
        if not _implication_holds_samples(antecedent, consequent, all_vars, rng, samples):
            return False
        if not _implication_holds_solver(handle, antecedent, consequent):
            return False

    t = assertion.transition
    antecedent = list(invariant.get(t.src, ())) + list(t.relation)
    for_literal = [lit.prime() for lit in assertion.clause.literals]
    all_vars = variables_of(antecedent + for_literal)
    for _ in range(samples):
        valuation: Valuation = {v: rng.randint(-6, 6) for v in all_vars}
        if evaluate_conjunction(antecedent, valuation) and not assertion.clause.prime().evaluate(valuation):
            return False
    handle.push()
    try:
        for row in antecedent:
            handle.assert_(smt_of_constraint(row))
        for lit in assertion.clause.literals:
            handle.assert_(smt_of_constraint(lit.prime().negate()))
        if handle.check_sat() != "unsat":
            return False
    finally:
        handle.pop()
    return True
