"""Compositional safety verifier for integer transition systems.

Per strongly connected component of the control flow graph, a
conditional inductive invariant supporting the assertion is synthesized
by Farkas-lemma constraint solving with a Max-SMT objective; its
initiation condition is propagated bottom-up through the component DAG
as an assertion on the preceding components, with program narrowing on
failed sub-proofs.  Verdicts can be cross-checked by an independent
bounded model checker.
"""

from .engine import (
    ConditionalInvariant,
    EngineConfig,
    ProofStats,
    Verdict,
    check_safe,
    cond_safe,
    prove,
)
from .errors import CondsafeError
from .model import (
    Assertion,
    Clause,
    LinearConstraint,
    Program,
    Transition,
    Valuation,
    Var,
    negate_conjunction,
)
from .parser import parse_program, program_to_text, resolve_assertions

__all__ = [
    "Assertion",
    "Clause",
    "ConditionalInvariant",
    "CondsafeError",
    "EngineConfig",
    "LinearConstraint",
    "Program",
    "ProofStats",
    "Transition",
    "Valuation",
    "Var",
    "Verdict",
    "check_safe",
    "cond_safe",
    "negate_conjunction",
    "parse_program",
    "program_to_text",
    "prove",
    "resolve_assertions",
]
