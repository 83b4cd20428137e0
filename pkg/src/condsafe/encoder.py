"""Template construction and Farkas-based constraint encoding.

For a component and an assertion, this module builds the Max-SMT
problem whose hard part demands an inductive template per location
(consecution for every internal transition, safety for the exit
transition) and whose soft part rewards establishing each template
conjunct directly from an entry transition (initiation).

Every implication `rows => row` over program states is reduced to an
existential system over nonnegative multipliers: the consequent must be
a nonnegative combination of the antecedent rows plus a slack constant.
Multiplying a template coefficient by a multiplier yields the nonlinear
integer atoms the backend solver is asked to handle.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EncoderError, ModelIncomplete
from .graph import Component
from .model import Assertion, LinearConstraint, Transition, Var
from .smt import Sexp, smt_implies, smt_of_constraint, smt_or, smt_sum

# Affine expressions over template variables: {None: constant, name: coeff}.
Aff = dict


def aff_const(n: int) -> Aff:
    return {None: n} if n else {}


def aff_tvar(name: str) -> Aff:
    return {name: 1}


def _aff_smt(aff: Aff) -> Sexp:
    terms: list[Sexp] = []
    for key, coeff in sorted(aff.items(), key=lambda kv: (kv[0] is not None, kv[0] or "")):
        if key is None:
            terms.append(coeff)
        else:
            terms.append(key if coeff == 1 else ("*", coeff, key))
    return smt_sum(terms)


# A row with affine coefficients: sum_v coeffs[v]*v + const <= 0.
@dataclass(frozen=True)
class FRow:
    coeffs: tuple[tuple[Var, tuple], ...]
    const: tuple

    @staticmethod
    def make(coeffs: dict[Var, Aff], const: Aff) -> "FRow":
        packed = tuple(sorted(((v, tuple(sorted(a.items(), key=str))) for v, a in coeffs.items() if a)))
        return FRow(packed, tuple(sorted(const.items(), key=str)))

    def coeff(self, v: Var) -> Aff:
        for var, packed in self.coeffs:
            if var == v:
                return dict(packed)
        return {}

    def const_aff(self) -> Aff:
        return dict(self.const)

    def variables(self) -> set[Var]:
        return {v for v, _ in self.coeffs}


def constraint_row(c: LinearConstraint) -> FRow:
    return FRow.make({v: aff_const(k) for v, k in c.terms}, aff_const(c.constant))


class NameGen:
    """Fresh solver-level symbol names."""

    def __init__(self):
        self.used: set[str] = set()

    def fresh(self, base: str) -> str:
        name = base
        n = 0
        while name in self.used:
            n += 1
            name = f"{base}.{n}"
        self.used.add(name)
        return name


@dataclass(frozen=True)
class TemplateRow:
    """One parametric inequality: tconst + sum_v tcoeff[v]*v <= 0."""

    location: str
    index: int
    const_var: str
    coeff_vars: tuple[tuple[Var, str], ...]

    def frow(self, primed: bool) -> FRow:
        coeffs = {
            (v.prime() if primed else v): aff_tvar(name) for v, name in self.coeff_vars
        }
        return FRow.make(coeffs, aff_tvar(self.const_var))

    def template_vars(self) -> list[str]:
        return [self.const_var] + [name for _, name in self.coeff_vars]


@dataclass(frozen=True)
class Template:
    """Conjunction of k parametric inequalities at one location."""

    location: str
    rows: tuple[TemplateRow, ...]

    def template_vars(self) -> list[str]:
        return [name for row in self.rows for name in row.template_vars()]


def build_templates(
    component: Component, k: int, program_vars: tuple[str, ...], gen: NameGen
) -> dict[str, Template]:
    """Fresh k-conjunct template for every location of the component."""
    if k < 1:
        raise EncoderError("template needs at least one conjunct")
    out: dict[str, Template] = {}
    for loc in component.locations:
        rows = []
        for j in range(1, k + 1):
            const_var = gen.fresh(f"tv.{loc}.{j}")
            coeff_vars = tuple((Var(name), gen.fresh(f"tv.{loc}.{j}.{name}")) for name in program_vars)
            rows.append(TemplateRow(loc, j, const_var, coeff_vars))
        out[loc] = Template(loc, tuple(rows))
    return out


@dataclass(frozen=True)
class FarkasSystem:
    """Existential witness constraints for one implication (or for the
    infeasibility of a conjunction when `consequent` was omitted)."""

    multipliers: tuple[str, ...]
    slack: str | None
    constraints: tuple[Sexp, ...]


def _mult(lam: str, aff: Aff) -> list[Sexp]:
    terms: list[Sexp] = []
    for key, coeff in sorted(aff.items(), key=lambda kv: (kv[0] is not None, kv[0] or "")):
        if key is None:
            terms.append(lam if coeff == 1 else ("*", coeff, lam))
        else:
            terms.append(("*", lam, key) if coeff == 1 else ("*", coeff, lam, key))
    return terms


def farkas_implication(
    antecedent: list[FRow],
    consequent: FRow,
    gen: NameGen,
    lambda_bound: int,
    columns: set[Var] | None = None,
) -> FarkasSystem:
    """`antecedent rows => consequent` as multiplier constraints.

    Exists lambda >= 0, slack >= 0 with, per variable column, the
    multiplied antecedent coefficients summing to the consequent's, and
    the combined constants reaching the consequent's constant exactly
    (the slack absorbs the difference).  The unsatisfiable-antecedent
    alternative (deriving 0 <= -1) is deliberately not part of this
    system.
    """
    cols: set[Var] = set()
    for row in antecedent:
        cols |= row.variables()
    cols |= consequent.variables()
    if columns is not None and not cols <= columns:
        raise EncoderError(f"rows use columns outside {sorted(map(str, columns))}")
    lams = [gen.fresh("lam") for _ in antecedent]
    slack = gen.fresh("mu")
    constraints: list[Sexp] = []
    for lam in lams:
        constraints.append((">=", lam, 0))
        constraints.append(("<=", lam, lambda_bound))
    constraints.append((">=", slack, 0))
    for v in sorted(cols):
        terms: list[Sexp] = []
        for lam, row in zip(lams, antecedent):
            terms.extend(_mult(lam, row.coeff(v)))
        constraints.append(("=", smt_sum(terms), _aff_smt(consequent.coeff(v))))
    const_terms: list[Sexp] = []
    for lam, row in zip(lams, antecedent):
        const_terms.extend(_mult(lam, row.const_aff()))
    constraints.append(
        ("=", ("-", smt_sum(const_terms), slack), _aff_smt(consequent.const_aff()))
    )
    return FarkasSystem(tuple(lams), slack, tuple(constraints))


def farkas_infeasible(rows: list[FRow], gen: NameGen, lambda_bound: int) -> FarkasSystem:
    """Multiplier witness that the conjunction of rows has no rational
    solution: a nonnegative combination with all variables cancelled and
    a positive constant."""
    cols: set[Var] = set()
    for row in rows:
        cols |= row.variables()
    lams = [gen.fresh("lam") for _ in rows]
    constraints: list[Sexp] = []
    for lam in lams:
        constraints.append((">=", lam, 0))
        constraints.append(("<=", lam, lambda_bound))
    for v in sorted(cols):
        terms: list[Sexp] = []
        for lam, row in zip(lams, rows):
            terms.extend(_mult(lam, row.coeff(v)))
        constraints.append(("=", smt_sum(terms), 0))
    const_terms: list[Sexp] = []
    for lam, row in zip(lams, rows):
        const_terms.extend(_mult(lam, row.const_aff()))
    constraints.append((">=", smt_sum(const_terms), 1))
    return FarkasSystem(tuple(lams), None, tuple(constraints))


@dataclass(frozen=True)
class EncoderConfig:
    coeff_bound: int = 10
    lambda_bound: int = 20


@dataclass
class MaxSmtProblem:
    """Hard constraints plus weighted soft indicator literals.

    `vacuity`, `selector_preference` and `cost` are deterministic
    tie-breaking layers applied after the soft weight is maximized; they
    never affect which hard constraints are satisfiable.
    """

    int_decls: tuple[str, ...]
    bool_decls: tuple[str, ...]
    hard: tuple[Sexp, ...]
    soft: tuple[tuple[str, int], ...]
    vacuity: tuple[str, ...] = ()
    vacuity_floor: int = 0
    selector_preference: tuple[str, ...] = ()
    cost: Sexp | None = None
    cost_vars: tuple[str, ...] = ()
    cost_bound: int = 0
    # metadata for reporting and tests
    safety_indicator: str | None = None
    n_consecution: int = 0
    n_initiation: int = 0
    n_safety_literals: int = 0


def _bounded_tvar_constraints(names: list[str], bound: int) -> list[Sexp]:
    out: list[Sexp] = []
    for name in names:
        out.append(("<=", name, bound))
        out.append((">=", name, -bound))
    return out


def _witness_rename(tid: str):
    def rename(v: Var) -> str:
        return f"wit.{tid}.{v.name}.p" if v.primed else f"wit.{tid}.{v.name}"

    return rename


def build_Fk(
    component: Component,
    entry_transitions: list[Transition],
    assertion: Assertion,
    k: int,
    program_vars: tuple[str, ...],
    config: EncoderConfig = EncoderConfig(),
    disabling: bool = False,
) -> tuple[MaxSmtProblem, dict[str, Template]]:
    """Assemble the constraint problem for one (component, assertion, k).

    Hard: consecution for every internal transition and safety for the
    exit transition (optionally weakened to "safety or some internal
    transition is infeasible under its source template").  Soft: one
    uniformly weighted indicator per entry transition and conjunct,
    true when that conjunct follows from the entry alone.
    """
    t_exit = assertion.transition
    if not component.contains_location(t_exit.src) or component.contains_transition(t_exit):
        raise EncoderError(f"{t_exit.id} is not an exit transition of the component")
    if assertion.clause.has_primed():
        raise EncoderError("assertion clause must range over unprimed variables")

    gen = NameGen()
    for name in program_vars:
        gen.used.add(name)
        gen.used.add(f"{name}.p")
    templates = build_templates(component, k, program_vars, gen)

    tvars = [name for tpl in templates.values() for name in tpl.template_vars()]
    int_decls: list[str] = list(tvars)
    bool_decls: list[str] = []
    hard: list[Sexp] = _bounded_tvar_constraints(tvars, config.coeff_bound)
    soft: list[tuple[str, int]] = []

    def antecedent_with_template(loc: str, rows: tuple[LinearConstraint, ...]) -> list[FRow]:
        frows = [row.frow(primed=False) for row in templates[loc].rows]
        frows.extend(constraint_row(c) for c in rows)
        return frows

    def collect(system: FarkasSystem, guard: str | None = None):
        int_decls.extend(system.multipliers)
        if system.slack is not None:
            int_decls.append(system.slack)
        for c in system.constraints:
            hard.append(smt_implies(guard, c) if guard else c)

    # Consecution, one block per internal transition.
    for t in component.transitions:
        antecedent = antecedent_with_template(t.src, t.relation)
        for row in templates[t.dst].rows:
            collect(farkas_implication(antecedent, row.frow(primed=True), gen, config.lambda_bound))

    # Safety for the exit transition; a multi-literal clause becomes a
    # hard disjunction of per-literal systems via selector booleans.
    safety_antecedent = antecedent_with_template(t_exit.src, t_exit.relation)
    literals = sorted(set(assertion.clause.literals), key=LinearConstraint.sort_key)
    selector_preference: list[str] = []
    safety_guard: str | None = None
    if disabling:
        safety_guard = gen.fresh("saf")
        bool_decls.append(safety_guard)
    if len(literals) == 1:
        collect(
            farkas_implication(
                safety_antecedent, constraint_row(literals[0].prime()), gen, config.lambda_bound
            ),
            guard=safety_guard,
        )
    else:
        sels = []
        for i, lit in enumerate(literals, 1):
            sel = gen.fresh(f"sel.{i}")
            bool_decls.append(sel)
            sels.append(sel)
            collect(
                farkas_implication(
                    safety_antecedent, constraint_row(lit.prime()), gen, config.lambda_bound
                ),
                guard=sel,
            )
        choice = smt_or(sels)
        hard.append(smt_implies(safety_guard, choice) if safety_guard else choice)
        selector_preference = sels

    # Initiation (soft): entry transition alone implies one conjunct.
    n_init = 0
    for t in entry_transitions:
        if not component.contains_location(t.dst):
            raise EncoderError(f"{t.id} does not enter the component")
        tau_rows = [constraint_row(c) for c in t.relation]
        for row in templates[t.dst].rows:
            p = gen.fresh(f"init.{t.id}.{row.index}")
            bool_decls.append(p)
            collect(
                farkas_implication(tau_rows, row.frow(primed=True), gen, config.lambda_bound),
                guard=p,
            )
            soft.append((p, 1))
            n_init += 1

    # Disabling alternative: safety may be replaced by a witness that some
    # internal transition is infeasible under its source template.
    if disabling:
        disable_flags = []
        for t in component.transitions:
            d = gen.fresh(f"dis.{t.id}")
            bool_decls.append(d)
            disable_flags.append(d)
            rows = antecedent_with_template(t.src, t.relation)
            collect(farkas_infeasible(rows, gen, config.lambda_bound), guard=d)
        hard.append(smt_or([safety_guard] + disable_flags))
        soft.append((safety_guard, k * len(entry_transitions) + 1))

    # Non-vacuity tie break: a witness state reachable through the entry
    # that satisfies the instantiated template at its target.
    vacuity: list[str] = []
    for t in entry_transitions:
        q = gen.fresh(f"vac.{t.id}")
        bool_decls.append(q)
        vacuity.append(q)
        rename = _witness_rename(t.id)
        wit_names = {rename(Var(n, p)) for n in program_vars for p in (False, True)}
        int_decls.extend(sorted(wit_names))
        for c in t.relation:
            hard.append(smt_implies(q, smt_of_constraint(c, rename)))
        for row in templates[t.dst].rows:
            terms: list[Sexp] = [("*", name, rename(v.prime())) for v, name in row.coeff_vars]
            terms.append(row.const_var)
            hard.append(smt_implies(q, ("<=", smt_sum(terms), 0)))

    cost_terms: list[Sexp] = [("ite", (">=", name, 0), name, ("-", name)) for name in tvars]

    problem = MaxSmtProblem(
        int_decls=tuple(int_decls),
        bool_decls=tuple(bool_decls),
        hard=tuple(hard),
        soft=tuple(soft),
        vacuity=tuple(vacuity),
        selector_preference=tuple(selector_preference),
        cost=smt_sum(cost_terms) if cost_terms else None,
        cost_vars=tuple(tvars),
        cost_bound=len(tvars) * config.coeff_bound,
        safety_indicator=safety_guard,
        n_consecution=len(component.transitions),
        n_initiation=n_init,
        n_safety_literals=len(literals),
    )
    return problem, templates


def build_Fk_with_disabling(
    component: Component,
    entry_transitions: list[Transition],
    assertion: Assertion,
    k: int,
    program_vars: tuple[str, ...],
    config: EncoderConfig = EncoderConfig(),
) -> tuple[MaxSmtProblem, dict[str, Template]]:
    """`build_Fk` with the safety-or-disable alternative enabled."""
    return build_Fk(component, entry_transitions, assertion, k, program_vars, config, disabling=True)


def instantiate(templates: dict[str, Template], model: dict[str, int | bool]) -> dict[str, tuple[LinearConstraint, ...]]:
    """Plug model values into the templates; trivial `0 <= 0` conjuncts
    are dropped and duplicates collapsed."""
    out: dict[str, tuple[LinearConstraint, ...]] = {}
    for loc, template in templates.items():
        rows: list[LinearConstraint] = []
        for trow in template.rows:
            try:
                coeffs = {v: model[name] for v, name in trow.coeff_vars}
                const = model[trow.const_var]
            except KeyError as exc:
                raise ModelIncomplete(f"model misses template variable {exc}") from exc
            row = LinearConstraint.make({v: int(c) for v, c in coeffs.items()}, int(const))
            if not row.is_true() and row not in rows:
                rows.append(row)
        out[loc] = tuple(rows)
    return out
