"""Batch CLI: run scenarios, verify traces, check category specs, replay.

Exit codes: 0 success, 1 config/IO error (message names the offending
field), 2 run non-convergence, 3 test failure / law violation / replay
mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .category import (
    check_category_laws,
    check_functor_laws,
    check_naturality,
    check_yoneda_distinguishability,
    load_category_doc,
)
from .engine import dump_trace, first_divergence, load_trace
from .errors import ScenarioError, SemgameError, SpecMismatch
from .metric import Metric
from .scenario import Scenario, load_scenario, run_scenario
from .verify import run_verification

_METRIC_FLAG = {"euclidean": "euclidean", "cosine": "cosine", "angular": "angular"}


def _apply_overrides(sc: Scenario, args) -> Scenario:
    engine = sc.engine
    if getattr(args, "seed", None) is not None:
        engine = dataclasses.replace(engine, seed=args.seed)
    if getattr(args, "metric", None) is not None:
        engine = dataclasses.replace(engine, metric=Metric(_METRIC_FLAG[args.metric]))
    sc = dataclasses.replace(sc, engine=engine)
    if getattr(args, "tests", None):
        tests = tuple(t.strip() for t in args.tests.split(",") if t.strip())
        sc = dataclasses.replace(sc, verify=dataclasses.replace(sc.verify, tests=tests))
    return sc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def cmd_run(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_scenario(sc)
    dump_trace(result.trace, out / "trace.jsonl")
    _write_json(out / "final_state.json", result.final.to_json())
    milestones = {"chi": 0, "delta": 0, "none": 0}
    for rec in result.trace[1:]:
        milestones[rec.milestone] += 1
    _write_json(
        out / "run_summary.json",
        {
            "scenario": sc.name,
            "seed": sc.engine.seed,
            "metric": sc.engine.metric.kind,
            "lambda_phi": sc.phi.lambda_phi(),
            "converged": result.converged,
            "converged_at": result.converged_at,
            "iterations": len(result.trace) - 1,
            "lipschitz_estimate": result.lipschitz,
            "warnings": result.warnings,
            "milestones": milestones,
        },
    )
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if result.converged:
        print(f"{sc.name}: converged at iteration {result.converged_at} "
              f"({len(result.trace) - 1} logged)")
        return 0
    print(f"{sc.name}: did not converge within {sc.engine.max_iters} iterations",
          file=sys.stderr)
    return 2


def cmd_verify(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    trace = load_trace(args.trace) if args.trace else None
    report = run_verification(sc, trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    for name, o in report.outcomes.items():
        line = f"{name}: {o.status}"
        if o.value is not None:
            line += f" (value {o.value:.6g}"
            line += f", threshold {o.threshold:.6g})" if o.threshold is not None else ")"
        if o.detail:
            line += f" -- {o.detail}"
        print(line)
    if report.passed:
        return 0
    failed = [n for n, o in report.outcomes.items() if o.status == "fail"]
    print(f"failed tests: {', '.join(failed)}", file=sys.stderr)
    return 3


def _resolve_category_doc(path: Path) -> dict:
    doc = json.loads(path.read_text())
    if "objects" in doc:
        return doc
    ref = doc.get("category")
    if ref is None:
        raise ScenarioError("category", "document has neither 'objects' nor a 'category' reference")
    if isinstance(ref, str):
        return json.loads((path.parent / ref).read_text())
    return ref


def cmd_category(args) -> int:
    path = Path(args.scenario)
    try:
        doc = _resolve_category_doc(path)
        cat, functor, eta = load_category_doc(doc)
    except (json.JSONDecodeError, FileNotFoundError, KeyError) as exc:
        print(f"error: category spec unreadable: {exc}", file=sys.stderr)
        return 1

    violations = list(check_category_laws(cat))
    print(f"category laws: {len(violations)} violation(s)")
    if functor is not None:
        fv = check_functor_laws(functor, cat, cat)
        print(f"functor laws: {len(fv)} violation(s)")
        violations += fv
        if eta is not None:
            nv = check_naturality(functor, eta, cat)
            print(f"naturality squares: {len(nv)} violation(s)")
            violations += nv
    yoneda = check_yoneda_distinguishability(cat)
    ambiguous = yoneda.ambiguous_pairs
    print(
        f"yoneda profiles: {len(yoneda.pairs)} pair(s) compared, "
        f"{len(ambiguous)} profile-ambiguous (profile equality is necessary, not sufficient)"
    )
    for p in ambiguous:
        print(f"  profile-ambiguous: {p.x} vs {p.y} (no isomorphism found)")
    for v in violations:
        print(f"  {v}", file=sys.stderr)
    return 0 if not violations else 3


def cmd_replay(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    trace = load_trace(args.trace)
    if not trace:
        print("empty trace: vacuously consistent")
        return 0
    if trace[0].state.dim != sc.dim:
        raise SpecMismatch(
            f"trace dim {trace[0].state.dim} does not match scenario dim {sc.dim}"
        )
    expected = sc.initial_state()
    if not np.array_equal(expected.vec, trace[0].state.vec):
        print("divergence at iteration 0: initial state does not match scenario", file=sys.stderr)
        return 3
    idx = first_divergence(trace, sc.phi, sc.gamma, sc.engine)
    if idx is None:
        print(f"replay consistent: {len(trace) - 1} iterations reproduced bit-exactly")
        return 0
    print(f"divergence at iteration {idx}", file=sys.stderr)
    return 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semgame",
        description="Fixed-point game engine: run scenarios, verify convergence, check categories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=False, trace=False, tests=False):
        p.add_argument("--scenario", required=True, help="scenario (or category spec) JSON path")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--metric", choices=sorted(_METRIC_FLAG), default=None,
                       help="override the scenario metric")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        if trace:
            p.add_argument("--trace", default=None, help="trace.jsonl path")
        if tests:
            p.add_argument("--tests", default=None, help="comma list of tests to run")

    p_run = sub.add_parser("run", help="run a scenario, write trace and summary")
    common(p_run, out=True)
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run the verification suite")
    common(p_verify, out=True, trace=True, tests=True)
    p_verify.set_defaults(func=cmd_verify)

    p_cat = sub.add_parser("category-check", help="check category/functor/naturality laws")
    common(p_cat)
    p_cat.set_defaults(func=cmd_category)

    p_replay = sub.add_parser("replay", help="re-execute a trace and compare bit-exactly")
    common(p_replay, trace=True)
    p_replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SemgameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
