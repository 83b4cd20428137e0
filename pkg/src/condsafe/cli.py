"""Command line driver: verify assertions of a `.its` file and report.

Exit codes: 0 all selected assertions Safe, 1 some Maybe, 2 usage or IO
error, 3 backend (solver) error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import engine, oracle
from .errors import BackendError, CondsafeError, ParseError
from .graph import decompose, to_dot
from .model import Assertion, Program
from .parser import parse_program, resolve_assertions
from .smt import SolverHandle, SolverStats, solver_command

JSON_SCHEMA = {
    "type": "object",
    "required": ["assertions", "total_s"],
    "properties": {
        "assertions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "result", "invariants", "stats"],
                "properties": {
                    "id": {"type": "string"},
                    "result": {"enum": ["Safe", "Maybe"]},
                    "invariants": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "array",
                            "items": {"type": "string"},
                        },
                    },
                    "stats": {
                        "type": "object",
                        "required": [
                            "calls",
                            "depth",
                            "narrowings",
                            "solver_sat_s",
                            "solver_unsat_s",
                        ],
                        "properties": {
                            "calls": {"type": "integer"},
                            "depth": {"type": "integer"},
                            "narrowings": {"type": "integer"},
                            "solver_sat_s": {"type": "number"},
                            "solver_unsat_s": {"type": "number"},
                        },
                    },
                },
            },
        },
        "total_s": {"type": "number"},
    },
}


@dataclass
class AssertionResult:
    label: str
    assertion: Assertion
    verdict: engine.Verdict
    stats: engine.ProofStats
    events: list[engine.ProofEvent]
    counterexample: oracle.Trace | None = None
    backend_error: str | None = None


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="condsafe",
        description="Prove safety assertions of integer transition systems "
        "by composing conditional inductive invariants.",
    )
    p.add_argument("file", help="program in .its format")
    p.add_argument("--assert", dest="asserts", action="append", default=[],
                   metavar="NAME", help="verify only assertions on NAME (repeatable)")
    p.add_argument("--solver", default=None,
                   help="SMT solver command (default: $CONDSAFE_SOLVER)")
    p.add_argument("--timeout-ms", type=int, default=5000,
                   help="per-query solver timeout (default 5000)")
    p.add_argument("--global-timeout-s", type=float, default=200.0,
                   help="wall budget for the whole run (default 200)")
    p.add_argument("--max-conjuncts", type=int, default=3,
                   help="largest template conjunction tried (default 3)")
    p.add_argument("--coeff-bound", type=int, default=10,
                   help="bound on template coefficient magnitude (default 10)")
    p.add_argument("--narrow-cap", type=int, default=16,
                   help="narrowing rounds per component (default 16)")
    p.add_argument("--no-strengthen", action="store_true",
                   help="do not push proven facts back into the program")
    p.add_argument("--no-memo", action="store_true",
                   help="disable memoization of failed subproofs")
    p.add_argument("--enable-disabling", action="store_true",
                   help="allow invariants that disable transitions instead of "
                        "implying the postcondition")
    p.add_argument("--parallel", type=int, default=1, metavar="N",
                   help="verify assertions on N worker threads (default 1)")
    p.add_argument("--bmc-check", action="store_true",
                   help="cross-check each verdict with the bounded model checker")
    p.add_argument("--bmc-depth", type=int, default=8, help="BMC unrolling depth (default 8)")
    p.add_argument("--bmc-bound", type=int, default=3,
                   help="BMC initial/havoc value bound (default 3)")
    p.add_argument("--dump-dag", action="store_true",
                   help="print the component DAG in DOT format and exit")
    p.add_argument("--json", dest="json_path", default=None, metavar="PATH",
                   help="also write the report as JSON to PATH")
    p.add_argument("--seed", type=int, default=0, help="seed for sampling (default 0)")
    return p


def _select(labels: list[tuple[str, Assertion]], wanted: list[str], specs) -> list[tuple[str, Assertion]]:
    if not wanted:
        return labels
    chosen = []
    for label, assertion in labels:
        base = label.split("[")[0]
        if base in wanted or label in wanted:
            chosen.append((label, assertion))
    return chosen


def _label_assertions(specs, assertions: list[Assertion]) -> list[tuple[str, Assertion]]:
    """Targets carrying several clauses get [i] suffixes; single-clause
    targets keep their bare name."""
    spec_targets: list[str] = []
    for spec in specs:
        spec_targets.extend([spec.target] * len(spec.clauses))
    final: list[tuple[str, Assertion]] = []
    seen: dict[str, int] = {}
    for target, assertion in zip(spec_targets, assertions):
        if spec_targets.count(target) > 1:
            i = seen.get(target, 0)
            seen[target] = i + 1
            final.append((f"{target}[{i}]", assertion))
        else:
            final.append((target, assertion))
    return final


def verify_file(
    path: str, args
) -> tuple[list[AssertionResult], Program, float]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    program, specs = parse_program(text)
    program, assertions = resolve_assertions(program, specs)
    labelled = _label_assertions(specs, assertions)
    labelled = _select(labelled, args.asserts, specs)
    if not labelled:
        raise CondsafeError("no assertions selected")

    config = engine.EngineConfig(
        solver=args.solver,
        timeout_ms=args.timeout_ms,
        max_conjuncts=args.max_conjuncts,
        coeff_bound=args.coeff_bound,
        narrow_cap=args.narrow_cap,
        strengthen=not args.no_strengthen,
        memo=not args.no_memo,
        disabling=args.enable_disabling,
        global_timeout_s=args.global_timeout_s,
    )

    started = time.monotonic()

    def run_one(item: tuple[str, Assertion]) -> AssertionResult:
        label, assertion = item
        try:
            verdict, stats, events = engine.prove(program, assertion, config)
        except BackendError as exc:
            return AssertionResult(
                label, assertion, engine.Verdict(False, diagnostic=str(exc)),
                engine.ProofStats(), [], backend_error=str(exc),
            )
        result = AssertionResult(label, assertion, verdict, stats, events)
        if args.bmc_check:
            try:
                with SolverHandle(
                    solver_command(args.solver), args.timeout_ms, SolverStats()
                ) as handle:
                    outcome = oracle.bmc(
                        program, assertion, args.bmc_depth, args.bmc_bound, handle
                    )
                if outcome.found:
                    result.counterexample = outcome.counterexample
            except BackendError as exc:
                result.backend_error = str(exc)
        return result

    if args.parallel > 1 and len(labelled) > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(run_one, labelled))
    else:
        results = [run_one(item) for item in labelled]
    return results, program, time.monotonic() - started


def _merged_invariants(verdict: engine.Verdict) -> dict[str, list[str]]:
    merged: dict[str, list[str]] = {}
    for _, invariant in verdict.chain:
        for loc, rows in invariant.items():
            bucket = merged.setdefault(loc, [])
            for row in rows:
                text = str(row)
                if text not in bucket:
                    bucket.append(text)
    return merged


def report_json(results: list[AssertionResult], total_s: float) -> dict:
    return {
        "assertions": [
            {
                "id": r.label,
                "result": r.verdict.status,
                "invariants": _merged_invariants(r.verdict),
                "stats": {
                    "calls": r.stats.checksafe_calls,
                    "depth": r.stats.max_depth,
                    "narrowings": r.stats.narrowings,
                    "solver_sat_s": round(r.stats.solver_sat_s, 4),
                    "solver_unsat_s": round(r.stats.solver_unsat_s, 4),
                },
            }
            for r in results
        ],
        "total_s": round(total_s, 4),
    }


def report_human(results: list[AssertionResult], total_s: float) -> str:
    lines: list[str] = []
    for r in results:
        lines.append(f"== assert {r.label}: {r.verdict.status}")
        if r.verdict.diagnostic:
            lines.append(f"   reason: {r.verdict.diagnostic}")
        invariants = _merged_invariants(r.verdict)
        if invariants:
            lines.append("   invariants:")
            for loc, rows in sorted(invariants.items()):
                lines.append(f"     {loc}: " + (" && ".join(rows) if rows else "true"))
        failed = [
            e.data["assertion"]
            for e in r.events
            if e.kind == "subproof" and e.data["verdict"] == "Maybe"
        ]
        if failed:
            lines.append("   failed subproofs: " + "; ".join(dict.fromkeys(failed)))
        if r.counterexample is not None:
            lines.append(f"   counterexample: {r.counterexample}")
        s = r.stats
        lines.append(
            f"   calls {s.checksafe_calls}  depth {s.max_depth}  narrowings {s.narrowings}"
            f"  memo-hits {s.memo_hits}"
        )
        lines.append(
            f"   solver: sat {s.solver_sat_s:.2f}s  unsat {s.solver_unsat_s:.2f}s"
            f"  queries {s.solver_queries}"
        )
    safe = sum(1 for r in results if r.verdict.safe)
    lines.append(f"-- {safe}/{len(results)} safe in {total_s:.2f}s")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        if args.dump_dag:
            with open(args.file, "r", encoding="utf-8") as fh:
                program, specs = parse_program(fh.read())
            program, _ = resolve_assertions(program, specs)
            sys.stdout.write(to_dot(decompose(program)))
            return 0
        results, program, total_s = verify_file(args.file, args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except CondsafeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(report_human(results, total_s))
    if args.json_path:
        with open(args.json_path, "w", encoding="utf-8") as fh:
            json.dump(report_json(results, total_s), fh, indent=2)
            fh.write("\n")
    if any(r.backend_error for r in results):
        return 3
    if all(r.verdict.safe for r in results):
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
