"""Weighted partial Max-SMT via a descending search over an SMT solver.

Soft-clause counts here are tiny (one indicator per entry transition and
template conjunct), so the optimum is found by a linear search on the
number of satisfied indicators: assert `hard and (sum indicators >= m)`
for m from |soft| down to 0 and take the first satisfiable bound.
`unknown` at some m is treated as unsatisfiable at that bound and the
result is flagged as possibly suboptimal.

Two tie-breaking layers run after the optimum is fixed (still under the
cardinality bound): maximizing the problem's vacuity indicators, then
fixing the first feasible safety selector in canonical order, then
binary-searching the minimal template cost.  They select among optimal
models deterministically and never change the satisfied soft weight.
"""

from __future__ import annotations

from dataclasses import dataclass

from .encoder import MaxSmtProblem
from .errors import BackendError
from .smt import Sexp, SolverHandle, smt_sum


@dataclass
class MaxSmtResult:
    status: str  # "optimal" | "hard_unsat" | "unknown"
    model: dict[str, int | bool] | None = None
    satisfied: frozenset[str] = frozenset()
    weight: int = 0
    maybe_suboptimal: bool = False
    sat_s: float = 0.0
    unsat_s: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


def _counter_sum(handle: SolverHandle, indicators: list[str], tag: str) -> Sexp:
    counters = []
    for i, name in enumerate(indicators):
        counter = f"cnt.{tag}.{i}"
        handle.declare_int(counter)
        handle.assert_(("=", counter, ("ite", name, 1, 0)))
        counters.append(counter)
    return smt_sum(counters)


def _descend(
    handle: SolverHandle, total: Sexp, n: int, floor: int = 0
) -> tuple[int | None, bool, dict | None]:
    """Largest m >= floor with `total >= m` satisfiable; (m, sawunknown, model)."""
    saw_unknown = False
    for m in range(n, floor - 1, -1):
        if m > 0:
            handle.push()
            handle.assert_((">=", total, m))
        outcome = handle.check_sat()
        if outcome == "sat":
            model = handle.get_model()
            if m > 0:
                handle.pop()
                handle.assert_((">=", total, m))  # pin the optimum
            return m, saw_unknown, model
        if outcome == "unknown":
            saw_unknown = True
        if m > 0:
            handle.pop()
    return None, saw_unknown, None


def maximize(problem: MaxSmtProblem, handle: SolverHandle) -> MaxSmtResult:
    """Optimal model of the hard constraints under maximum soft weight.

    Weights must be uniform, or uniform plus a single heavier indicator
    (the disabling variant); the heavy indicator is then decided first,
    which is exact because its weight exceeds the sum of the others.
    """
    stats = handle.stats
    sat0, unsat0 = stats.sat_s, stats.unsat_s

    for name in problem.int_decls:
        handle.declare_int(name)
    for name in problem.bool_decls:
        handle.declare_bool(name)
    for expr in problem.hard:
        handle.assert_(expr)

    weights = sorted({w for _, w in problem.soft})
    if len(weights) > 2:
        raise BackendError("maximize supports uniform weights plus one heavy indicator")
    heavy = [p for p, w in problem.soft if len(weights) == 2 and w == weights[-1]]
    light = [p for p, w in problem.soft if p not in heavy]
    if len(heavy) > 1:
        raise BackendError("maximize supports at most one heavy soft indicator")

    maybe_suboptimal = False
    model: dict | None = None
    heavy_on = False

    def finish(status: str) -> MaxSmtResult:
        satisfied = frozenset(
            p for p, _ in problem.soft if model is not None and model.get(p) is True
        )
        weight = sum(w for p, w in problem.soft if p in satisfied)
        return MaxSmtResult(
            status,
            model,
            satisfied,
            weight,
            maybe_suboptimal,
            sat_s=stats.sat_s - sat0,
            unsat_s=stats.unsat_s - unsat0,
        )

    # The caller may require a minimum vacuity count; asserting it up
    # front never changes an acceptable optimum (a satisfied initiation
    # on a live entry implies its vacuity witness) and lets hopeless
    # instances die on the first query.
    vac_total: Sexp | None = None
    if problem.vacuity:
        vac_total = _counter_sum(handle, list(problem.vacuity), "vac")
        if problem.vacuity_floor > 0:
            handle.assert_((">=", vac_total, problem.vacuity_floor))

    # Cheap feasibility precheck: if the hard part (plus floor) is
    # already unsatisfiable, skip the whole descent.
    outcome = handle.check_sat()
    if outcome != "sat":
        status = (
            "rejected"
            if problem.vacuity_floor > 0 and outcome == "unsat"
            else ("unknown" if outcome == "unknown" else "hard_unsat")
        )
        return finish(status)
    model = handle.get_model()

    # Heavy indicator first: its weight beats all light ones combined.
    if heavy:
        handle.push()
        handle.assert_(heavy[0])
        outcome = handle.check_sat()
        if outcome == "sat":
            model = handle.get_model()
            heavy_on = True
            handle.pop()
            handle.assert_(heavy[0])
        else:
            if outcome == "unknown":
                maybe_suboptimal = True
            handle.pop()

    if light:
        total = _counter_sum(handle, light, "soft")
        best_m, saw_unknown, light_model = _descend(handle, total, len(light))
        maybe_suboptimal = maybe_suboptimal or saw_unknown
        if light_model is not None:
            model = light_model

    # Tie break 1: prefer models whose template is satisfiable after as
    # many entry transitions as possible (rules out vacuous invariants).
    if vac_total is not None:
        _, _, vac_model = _descend(
            handle, vac_total, len(problem.vacuity), problem.vacuity_floor
        )
        if vac_model is not None:
            model = vac_model

    # Tie break 2: first feasible safety literal in canonical order.
    for sel in problem.selector_preference:
        handle.push()
        handle.assert_(sel)
        if handle.check_sat() == "sat":
            model = handle.get_model()
            handle.pop()
            handle.assert_(sel)
            break
        handle.pop()

    # Tie break 3: minimal sum of template coefficient magnitudes,
    # binary-searched below the current model's cost.
    if problem.cost is not None and model is not None:
        lo = 0
        hi = min(
            problem.cost_bound,
            sum(abs(int(model.get(v, 0))) for v in problem.cost_vars),
        )
        while lo < hi:
            mid = (lo + hi) // 2
            handle.push()
            handle.assert_(("<=", problem.cost, mid))
            if handle.check_sat() == "sat":
                model = handle.get_model()
                hi = mid
            else:
                lo = mid + 1
            handle.pop()

    if model is None:
        return finish("unknown")
    return finish("optimal")
