"""The proof engine: conditional-invariant synthesis and its composition.

`cond_safe` asks the Max-SMT backend for a per-location conditional
inductive invariant supporting one assertion on one component; it tries
templates of 1..MAX_CONJUNCTS inequalities per location.  `check_safe`
composes such invariants bottom-up over the component DAG: the invariant
at an entry's target becomes an assertion on the predecessor component.
Failed sub-proofs trigger narrowing, which conjoins the negation of the
already-proven region onto entry and component transitions and retries,
yielding disjunctive invariants one disjunct at a time.

Every invariant returned by the backend is re-validated with plain
solver validity queries before it is trusted; a failure there is an
internal soundness bug, never user error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from threading import Lock

from .encoder import EncoderConfig, build_Fk, instantiate
from .errors import BackendError, GlobalDeadlineExceeded, InternalSoundnessError
from .graph import Component, decompose, dominates, entries
from .maxsmt import maximize
from .model import (
    FALSE,
    Assertion,
    Clause,
    LinearConstraint,
    Program,
    Transition,
    negate_conjunction,
)
from .smt import (
    Sexp,
    SolverHandle,
    SolverStats,
    smt_of_clause,
    smt_of_constraint,
    solver_command,
)

MAX_CONJUNCTS = 3


@dataclass(frozen=True)
class EngineConfig:
    solver: str | None = None
    timeout_ms: int = 5000
    max_conjuncts: int = MAX_CONJUNCTS
    coeff_bound: int = 10
    lambda_bound: int = 20
    narrow_cap: int = 16
    depth_cap: int = 32
    strengthen: bool = True
    memo: bool = True
    disabling: bool = False
    bound_retry: bool = True
    global_timeout_s: float | None = 200.0


@dataclass
class ProofStats:
    """Counters in the shape of the usual benchmark tables."""

    checksafe_calls: int = 0
    max_depth: int = 0
    narrowings: int = 0
    solver_sat_s: float = 0.0
    solver_unsat_s: float = 0.0
    solver_queries: int = 0
    memo_hits: int = 0


@dataclass(frozen=True)
class ConditionalInvariant:
    """Map from locations to conjunctions of concrete inequalities."""

    by_location: tuple[tuple[str, tuple[LinearConstraint, ...]], ...]

    @staticmethod
    def from_dict(d: dict[str, tuple[LinearConstraint, ...]]) -> "ConditionalInvariant":
        return ConditionalInvariant(tuple(sorted(d.items())))

    def at(self, loc: str) -> tuple[LinearConstraint, ...]:
        for name, rows in self.by_location:
            if name == loc:
                return rows
        return ()

    def items(self):
        return self.by_location

    def __str__(self) -> str:
        parts = []
        for loc, rows in self.by_location:
            body = " && ".join(str(r) for r in rows) if rows else "true"
            parts.append(f"{loc}: {body}")
        return "; ".join(parts) or "true"


EMPTY_INVARIANT = ConditionalInvariant(())


@dataclass(frozen=True)
class Verdict:
    safe: bool
    chain: tuple[tuple[Assertion, ConditionalInvariant], ...] = ()
    diagnostic: str | None = None
    memoizable: bool = False

    @property
    def status(self) -> str:
        return "Safe" if self.safe else "Maybe"


@dataclass(frozen=True)
class ProofEvent:
    kind: str  # "condsafe" | "subproof" | "narrow" | "memo_hit" | "strengthen"
    data: dict


@dataclass
class CondSafeResult:
    invariant: dict[str, tuple[LinearConstraint, ...]] | None
    disabled: tuple[str, ...] = ()
    diagnostic: str | None = None
    conjuncts: int = 0
    soft_weight: int = 0


class MemoTable:
    """Failed (Maybe) sub-proof keys, local to one top-level proof.

    Keys are id-insensitive: transitions are fingerprinted by source,
    target and canonicalized relation, so structurally identical narrowed
    instances hit regardless of the fresh ids they carry.
    """

    def __init__(self):
        self._table: dict[tuple, str] = {}
        self._lock = Lock()

    @staticmethod
    def _t_key(t: Transition):
        return (t.src, t.dst, tuple(r.sort_key() for r in t.relation_canonical()))

    @classmethod
    def key(cls, component: Component, entry_list: list[Transition], assertion: Assertion):
        return (
            tuple(sorted(cls._t_key(t) for t in component.transitions)),
            tuple(sorted(cls._t_key(t) for t in entry_list)),
            cls._t_key(assertion.transition),
            tuple(l.sort_key() for l in assertion.clause.canonical().literals),
        )

    def lookup(self, key) -> str | None:
        with self._lock:
            return self._table.get(key)

    def insert(self, key, diagnostic: str):
        with self._lock:
            self._table.setdefault(key, diagnostic)

    def __len__(self) -> int:
        return len(self._table)


class ProofContext:
    """Mutable state of one top-level proof: the (strengthened) program,
    memo table, stats, narrowing lineage and the shared validity solver."""

    def __init__(self, program: Program, config: EngineConfig):
        self.program = program
        self.config = config
        self.solver_cmd = solver_command(config.solver)
        self.memo = MemoTable()
        self.stats = ProofStats()
        self.solver_stats = SolverStats()
        self.events: list[ProofEvent] = []
        # narrowed transition id -> (origin id, narrowing conjunctions)
        self.lineage: dict[str, tuple[str, tuple[tuple[LinearConstraint, ...], ...]]] = {}
        self._fresh = 0
        self._liveness: dict[tuple, bool] = {}
        self._validity: SolverHandle | None = None
        self.deadline = (
            time.monotonic() + config.global_timeout_s if config.global_timeout_s else None
        )

    # -- plumbing --

    def check_deadline(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise GlobalDeadlineExceeded("global time budget exhausted")

    def fresh_id(self, base: str) -> str:
        self._fresh += 1
        return f"{base}__n{self._fresh}"

    def fresh_n(self) -> int:
        self._fresh += 1
        return self._fresh

    def origin_id(self, t: Transition) -> str:
        tid = t.id
        while tid in self.lineage:
            tid = self.lineage[tid][0]
        return tid

    def event(self, kind: str, **data):
        self.events.append(ProofEvent(kind, data))

    def close(self):
        if self._validity is not None:
            self._validity.close()
            self._validity = None

    # -- validity queries (plain SMT, no templates) --

    def _validity_handle(self) -> SolverHandle:
        if self._validity is None or self._validity._dead:
            self._validity = SolverHandle(
                self.solver_cmd, self.config.timeout_ms, self.solver_stats
            )
            for name in self.program.vars:
                self._validity.declare_int(name)
                self._validity.declare_int(f"{name}.p")
        return self._validity

    def unsat(self, rows: list[LinearConstraint], extra: list[Sexp] = ()) -> bool:
        """True iff rows (plus extra formulas) have no integer solution."""
        self.check_deadline()
        handle = self._validity_handle()
        handle.push()
        try:
            for row in rows:
                handle.assert_(smt_of_constraint(row))
            for expr in extra:
                handle.assert_(expr)
            outcome = handle.check_sat()
        finally:
            handle.pop()
        if outcome == "unknown":
            return False  # cannot certify validity
        return outcome == "unsat"

    def implication_valid(
        self, antecedent: list[LinearConstraint], consequent_clause: Clause
    ) -> bool:
        """`antecedent => consequent_clause` over the integers."""
        negated = [lit.negate() for lit in consequent_clause.literals]
        return self.unsat(list(antecedent) + negated)

    def transition_live(self, t: Transition) -> bool:
        """Satisfiability of a transition relation, cached."""
        key = tuple(r.sort_key() for r in t.relation_canonical())
        if key not in self._liveness:
            self._liveness[key] = not self.unsat(list(t.relation))
        return self._liveness[key]


# --- CondSafe (template synthesis) ----------------------------------------


def cond_safe(
    ctx: ProofContext,
    component: Component,
    entry_list: list[Transition],
    assertion: Assertion,
) -> CondSafeResult:
    """Per-location conditional invariant for one assertion, or None.

    Template sizes k = 1..max_conjuncts are tried in order; if every k is
    unsatisfiable at the default coefficient bounds, one retry at 10x
    bounds is made.  Any returned invariant has already passed the
    re-validation of its consecution and safety implications.
    """
    config = ctx.config
    scales = (1, 10) if config.bound_retry else (1,)
    diagnostic = None
    for scale in scales:
        encoder_config = EncoderConfig(
            coeff_bound=config.coeff_bound * scale,
            lambda_bound=config.lambda_bound * scale,
        )
        handle = None
        try:
            handle = SolverHandle(ctx.solver_cmd, config.timeout_ms, ctx.solver_stats)
            for k in range(1, config.max_conjuncts + 1):
                ctx.check_deadline()
                problem, templates = build_Fk(
                    component,
                    entry_list,
                    assertion,
                    k,
                    ctx.program.vars,
                    encoder_config,
                    disabling=config.disabling,
                )
                if entry_list and any(ctx.transition_live(t) for t in entry_list):
                    # A template region unreachable through every live entry
                    # dooms all sub-proofs, and the induced narrowing would
                    # not change the instance; demand one reachable witness.
                    problem.vacuity_floor = 1
                handle.push()
                result = maximize(problem, handle)
                if result.is_optimal:
                    if _vacuous_for_live_entries(ctx, entry_list, problem, result.model):
                        handle.pop()
                        continue
                    invariant = instantiate(templates, result.model)
                    disabled: tuple[str, ...] = ()
                    saf = problem.safety_indicator
                    if saf is not None and result.model.get(saf) is not True:
                        disabled = tuple(
                            t.id
                            for t in component.transitions
                            if result.model.get(f"dis.{t.id}") is True
                        )
                    _revalidate(ctx, component, assertion, invariant, disabled)
                    note = "suboptimal-possible" if result.maybe_suboptimal else None
                    return CondSafeResult(
                        invariant, disabled, note, conjuncts=k, soft_weight=result.weight
                    )
                if result.status == "unknown":
                    diagnostic = "solver answered unknown"
                handle.pop()
        except BackendError as exc:
            return CondSafeResult(None, diagnostic=f"backend: {exc}")
        finally:
            if handle is not None:
                handle.close()
    return CondSafeResult(None, diagnostic=diagnostic)


def _vacuous_for_live_entries(
    ctx: ProofContext,
    entry_list: list[Transition],
    problem,
    model: dict[str, int | bool],
) -> bool:
    """True when some entry has a satisfiable relation yet no entry's
    vacuity witness holds: the invariant region is unreachable through
    every live entry."""
    if not entry_list:
        return False
    if any(model.get(q) is True for q in problem.vacuity):
        return False
    return any(ctx.transition_live(t) for t in entry_list)


def _revalidate(
    ctx: ProofContext,
    component: Component,
    assertion: Assertion,
    invariant: dict[str, tuple[LinearConstraint, ...]],
    disabled: tuple[str, ...],
):
    """Theorem-1 style post-check: consecution per internal transition and
    safety for the exit transition, each as one solver validity query."""
    for t in component.transitions:
        q_src = list(invariant.get(t.src, ()))
        q_dst = invariant.get(t.dst, ())
        if t.id in disabled:
            if not ctx.unsat(q_src + list(t.relation)):
                raise InternalSoundnessError(
                    f"disabled transition {t.id} is feasible under its invariant"
                )
            continue
        if not q_dst:
            continue
        negated = smt_of_clause(negate_conjunction(q_dst).prime())
        if not ctx.unsat(q_src + list(t.relation), [negated]):
            raise InternalSoundnessError(
                f"consecution fails for {t.id}: {invariant}"
            )
    if not disabled:
        t = assertion.transition
        q_src = list(invariant.get(t.src, ()))
        negated = [lit.prime().negate() for lit in assertion.clause.literals]
        if not ctx.unsat(q_src + list(t.relation) + negated):
            raise InternalSoundnessError(
                f"safety fails for {t.id}: {invariant}"
            )


# --- narrowing -------------------------------------------------------------


def narrow_entries(
    ctx: ProofContext,
    entry_list: list[Transition],
    invariant: dict[str, tuple[LinearConstraint, ...]],
    res: dict[tuple[str, LinearConstraint], Verdict],
) -> list[Transition]:
    """Conjoin onto each entry the negation of its unproven literals.

    A multi-literal negation is a disjunction, which the program model
    cannot carry on one edge, so it materializes as parallel transitions.
    An entry whose literals were all proven keeps a single dead copy
    (its narrowing condition is `not true`).
    """
    narrowed: list[Transition] = []
    for t in entry_list:
        failed = [
            lit
            for lit in _ordered_literals(invariant.get(t.dst, ()))
            if not res[(t.id, lit)].safe
        ]
        origin, psis = ctx.lineage.get(t.id, (t.id, ()))
        if not failed:
            dead = t.conjoin([FALSE], ctx.fresh_id(t.id))
            ctx.lineage[dead.id] = (origin, psis + ((),))
            narrowed.append(dead)
            continue
        negation = negate_conjunction(failed).prime()
        for lit in negation.literals:
            new = t.conjoin([lit], ctx.fresh_id(t.id))
            ctx.lineage[new.id] = (origin, psis + (tuple(failed),))
            narrowed.append(new)
    return narrowed


def narrow_component(
    ctx: ProofContext,
    component: Component,
    invariant: dict[str, tuple[LinearConstraint, ...]],
    keep: Transition | None = None,
) -> Component:
    """Replace each internal relation tau by tau and not Q(src) and not
    Q(dst)', distributing the two negation clauses over parallel copies.

    Copies whose relation is unsatisfiable carry no evaluations and are
    dropped on the spot; this keeps the k*k fan-out of repeated narrowing
    from inflating later constraint systems.  `keep` (an assertion
    transition internal to the component) is left unchanged: narrowing it
    could break the safety induction for the very assertion under proof.
    """
    new_transitions: list[Transition] = []
    for t in component.transitions:
        if keep is not None and t.id == keep.id:
            new_transitions.append(t)
            continue
        q_src = invariant.get(t.src, ())
        q_dst = invariant.get(t.dst, ())
        pre_literals = negate_conjunction(q_src).literals if q_src else (FALSE,)
        post_literals = (
            negate_conjunction(q_dst).prime().literals if q_dst else (FALSE,)
        )
        for pre in pre_literals:
            for post in post_literals:
                candidate = t.conjoin([pre, post], ctx.fresh_id(t.id))
                if ctx.transition_live(candidate):
                    new_transitions.append(candidate)
    return component.with_transitions(new_transitions)


def _ordered_literals(rows: tuple[LinearConstraint, ...]) -> list[LinearConstraint]:
    return sorted(rows, key=LinearConstraint.sort_key)


# --- strengthening ---------------------------------------------------------


def strengthen(ctx: ProofContext, t: Transition, proven: LinearConstraint):
    """Record a proven post-state fact on the original program transition.

    For an unnarrowed entry the fact is conjoined onto the transition
    itself.  For a narrowed entry, with narrowing conjunctions
    psi_1..psi_m, what was proven is `psi_1' or ... or psi_m' or fact'`
    after the original transition, so the original is replaced by m+1
    transitions carrying one disjunct each.
    """
    if proven.is_true():
        return
    origin, psis = ctx.lineage.get(t.id, (t.id, ()))
    if not ctx.program.has_transition(origin):
        return  # already replaced by an earlier strengthening
    original = ctx.program.transition(origin)
    if not psis:
        updated = original.conjoin([proven.prime()])
        ctx.program = ctx.program.replace_transition(origin, [updated])
        ctx.event("strengthen", transition=origin, fact=str(proven), split=1)
        return
    if any(not psi for psi in psis):
        return  # a dead narrowing conjunct carries no information
    n = ctx.fresh_n()
    replacements: list[Transition] = []
    for i, psi in enumerate(psis, 1):
        primed = [row.prime() for row in psi]
        replacements.append(original.conjoin(primed, f"{origin}__s{n}_{i}"))
    replacements.append(original.conjoin([proven.prime()], f"{origin}__s{n}_f"))
    replacements = [t for t in replacements if ctx.transition_live(t)]
    ctx.program = ctx.program.replace_transition(origin, replacements)
    ctx.event("strengthen", transition=origin, fact=str(proven), split=len(replacements))


# --- CheckSafe (composition over the DAG) -----------------------------------


def check_safe(
    ctx: ProofContext,
    component: Component,
    entry_list: list[Transition],
    assertion: Assertion,
    depth: int = 0,
    narrow_round: int = 0,
) -> Verdict:
    """Prove one assertion by composing conditional invariants bottom-up."""
    ctx.stats.checksafe_calls += 1
    ctx.stats.max_depth = max(ctx.stats.max_depth, depth)
    ctx.check_deadline()
    _assert_dominance(ctx, entry_list, assertion)

    # A memoized Maybe short-circuits everything, including the validity
    # fast path (identical keys would reach identical answers).
    memo_key = MemoTable.key(component, entry_list, assertion) if ctx.config.memo else None
    if memo_key is not None:
        hit = ctx.memo.lookup(memo_key)
        if hit is not None:
            ctx.stats.memo_hits += 1
            ctx.event("memo_hit", assertion=str(assertion))
            return Verdict(False, diagnostic=f"memoized: {hit}", memoizable=False)

    verdict = _check_safe_body(ctx, component, entry_list, assertion, depth, narrow_round)
    if memo_key is not None and not verdict.safe and verdict.memoizable:
        ctx.memo.insert(memo_key, verdict.diagnostic or "unprovable")
    return verdict


def _check_safe_body(
    ctx: ProofContext,
    component: Component,
    entry_list: list[Transition],
    assertion: Assertion,
    depth: int,
    narrow_round: int,
) -> Verdict:
    t_exit = assertion.transition
    # Fast path: the exit relation alone already implies the clause.
    if ctx.implication_valid(list(t_exit.relation), assertion.clause.prime()):
        return Verdict(True, chain=((assertion, EMPTY_INVARIANT),))
    if t_exit.src == ctx.program.init_location:
        return Verdict(
            False,
            diagnostic="assertion reaches the initial location unproven",
            memoizable=True,
        )

    result = cond_safe(ctx, component, entry_list, assertion)
    ctx.event(
        "condsafe",
        assertion=str(assertion),
        invariant=None if result.invariant is None else dict(result.invariant),
        disabled=result.disabled,
        k=result.conjuncts,
    )
    if result.invariant is None:
        clean = result.diagnostic is None
        return Verdict(
            False,
            diagnostic=result.diagnostic or "no conditional invariant found",
            memoizable=clean,
        )
    invariant = result.invariant

    res: dict[tuple[str, LinearConstraint], Verdict] = {}
    all_safe = True
    memoizable = True
    for t in entry_list:
        for lit in _ordered_literals(invariant.get(t.dst, ())):
            ctx.check_deadline()
            sub = Assertion(t, Clause.of(lit))
            if depth >= ctx.config.depth_cap:
                verdict = Verdict(False, diagnostic="recursion depth cap", memoizable=False)
            else:
                dag = decompose(ctx.program)
                sub_component = dag.component_of(t.src)
                sub_entries = entries(sub_component, ctx.program)
                verdict = check_safe(ctx, sub_component, sub_entries, sub, depth + 1)
            res[(t.id, lit)] = verdict
            ctx.event("subproof", assertion=str(sub), verdict=verdict.status)
            if verdict.safe:
                if ctx.config.strengthen:
                    strengthen(ctx, t, lit)
            else:
                all_safe = False
                memoizable = memoizable and verdict.memoizable

    if all_safe:
        chain: tuple = ((assertion, ConditionalInvariant.from_dict(invariant)),)
        for verdict in res.values():
            chain += verdict.chain
        if result.disabled:
            # The invariant only disables transitions; re-prove the
            # assertion on the component without them.
            reduced = component.with_transitions(
                [t for t in component.transitions if t.id not in result.disabled]
            )
            inner = check_safe(ctx, reduced, entry_list, assertion, depth + 1, narrow_round)
            if not inner.safe:
                return Verdict(False, diagnostic=inner.diagnostic, memoizable=inner.memoizable)
            return Verdict(True, chain=chain + inner.chain)
        return Verdict(True, chain=chain)

    if result.disabled:
        # Narrowing is justified by the safety constraint, which the
        # disable route does not establish.
        return Verdict(False, diagnostic="disable-route invariant not initiated", memoizable=memoizable)

    if narrow_round >= ctx.config.narrow_cap:
        return Verdict(False, diagnostic="narrowing cap reached", memoizable=True)
    if depth >= ctx.config.depth_cap:
        return Verdict(False, diagnostic="recursion depth cap", memoizable=False)

    new_entries = narrow_entries(ctx, entry_list, invariant, res)
    keep = assertion.transition if component.contains_transition(assertion.transition) else None
    new_component = narrow_component(ctx, component, invariant, keep=keep)
    if MemoTable.key(new_component, new_entries, assertion) == MemoTable.key(
        component, entry_list, assertion
    ):
        # Nothing was strictly strengthened; retrying would loop.
        return Verdict(False, diagnostic="narrowing made no progress", memoizable=True)
    ctx.stats.narrowings += 1
    ctx.event(
        "narrow",
        round=narrow_round + 1,
        assertion=str(assertion),
        invariant=dict(invariant),
        old_component=component,
        old_entries=tuple(entry_list),
        new_component=new_component,
        new_entries=tuple(new_entries),
    )
    return check_safe(ctx, new_component, new_entries, assertion, depth + 1, narrow_round + 1)


def _assert_dominance(ctx: ProofContext, entry_list: list[Transition], assertion: Assertion):
    """Structural sanity check behind the composition argument: the entry
    set must dominate the assertion transition (checked on origin ids,
    best effort once strengthening has replaced originals).  Assertions
    leaving the initial location never recurse, so they are exempt."""
    if assertion.transition.src == ctx.program.init_location:
        return
    t_origin_id = ctx.origin_id(assertion.transition)
    if not ctx.program.has_transition(t_origin_id):
        return
    blockers = []
    for t in entry_list:
        oid = ctx.origin_id(t)
        if not ctx.program.has_transition(oid):
            return
        blockers.append(ctx.program.transition(oid))
    target = ctx.program.transition(t_origin_id)
    if not dominates(blockers, target, ctx.program):
        raise InternalSoundnessError(
            f"entries {[b.id for b in blockers]} do not dominate {target.id}"
        )


# --- top level ---------------------------------------------------------------


def prove(
    program: Program, assertion: Assertion, config: EngineConfig
) -> tuple[Verdict, ProofStats, list[ProofEvent]]:
    """Run CheckSafe for one assertion on a fresh proof context."""
    if program.incoming(program.init_location):
        raise ValueError(
            "the initial location must have no incoming transitions; "
            "add a dedicated start location"
        )
    ctx = ProofContext(program, config)
    try:
        dag = decompose(program)
        component = dag.component_of(assertion.transition.src)
        entry_list = entries(component, program)
        verdict = check_safe(ctx, component, entry_list, assertion)
    except GlobalDeadlineExceeded:
        verdict = Verdict(False, diagnostic="global timeout")
    finally:
        ctx.stats.solver_sat_s = ctx.solver_stats.sat_s
        ctx.stats.solver_unsat_s = ctx.solver_stats.unsat_s
        ctx.stats.solver_queries = ctx.solver_stats.queries
        ctx.close()
    return verdict, ctx.stats, ctx.events


def narrowed_instance_program(
    program: Program,
    old_component: Component,
    old_entries: tuple[Transition, ...],
    new_component: Component,
    new_entries: tuple[Transition, ...],
) -> Program:
    """Program with one narrowed instance substituted in; the narrowing
    preservation suite runs the trace oracle on this."""
    drop = {t.id for t in old_component.transitions} | {t.id for t in old_entries}
    kept = [t for t in program.transitions if t.id not in drop]
    return Program(
        program.vars,
        program.locations,
        program.init_location,
        tuple(kept) + new_component.transitions + tuple(new_entries),
    )
