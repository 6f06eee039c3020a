"""ipa-check: command-line front end.

Exit codes: 0 pass/holds, 1 property or refinement failure, 2 usage, parse or
modeling error, 3 bound exceeded / inconclusive.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from . import __version__
from .analysis import analysis_json, analyze, check_abstraction_constraints
from .composer import (BuildError, build_abstract_spec, build_compositional_spec,
                       compositional_check, cost_comparison, direct_check)
from .explorer import Bounds, Trace, default_workers, trace_replay
from .kernel import EvalError
from .parser import SpecError, load_manifest, load_spec

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 2 like parse errors
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ipa-check", description="Interaction-preserving abstraction checker.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, manifest_required: bool):
        sp.add_argument("spec", nargs="?", help="root specification (.ipa); defaults to the "
                        "manifest's spec line")
        sp.add_argument("--manifest", required=manifest_required, help="IPA manifest (.ipam)")
        sp.add_argument("--format", choices=("table", "json"), default="table")
        sp.add_argument("--out", help="write the report here instead of standard output")

    def bounded(sp):
        sp.add_argument("--max-states", type=_positive, default=10_000_000)
        sp.add_argument("--max-depth", type=_positive, default=None)
        sp.add_argument("--workers", type=_positive, default=None,
                        help="worker processes (default: $IPA_CHECK_WORKERS or 1)")
        sp.add_argument("--deadlock-error", action="store_true",
                        help="treat states without successors as errors")
        sp.add_argument("--trace-out", default="counterexample.json",
                        help="where to write counterexample evidence (default: %(default)s)")

    sp = sub.add_parser("analyze", help="dependency/interaction analysis and constraints 1-4")
    common(sp, False)
    for name, text in (("check", "compositional check: constraints, A, every C_i => A"),
                       ("direct", "direct check: S => A and exploration of S"),
                       ("compare", "compositional and direct checks with cost comparison")):
        sp = sub.add_parser(name, help=text)
        common(sp, True)
        bounded(sp)

    sp = sub.add_parser("replay", help="validate a trace file")
    sp.add_argument("trace")
    sp.add_argument("spec", nargs="?", help="specification the trace belongs to "
                    "(default: recorded in the trace file)")
    sp.add_argument("--manifest", help="manifest, for traces of A or of a C_i")
    sp.add_argument("--target", help="S, A or C_<module> (default: recorded in the trace file)")
    sp.add_argument("--format", choices=("table", "json"), default="table")
    sp.add_argument("--out")

    sp = sub.add_parser("generate", help="write a random instance (spec, abstractions, manifest)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mutate", action="store_true", help="break one abstract update")
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("crossval", help="compositional vs direct verdicts on random instances")
    sp.add_argument("--seed", type=int, default=0, help="first seed")
    sp.add_argument("--count", type=_positive, default=100)
    sp.add_argument("--format", choices=("table", "json"), default="table")
    sp.add_argument("--out")
    return p


# --- rendering ----------------------------------------------------------------


def _table(rows: list) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    out = []
    for r in rows:
        out.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(out)


def _short(module: str) -> str:
    return module if len(module) <= 8 else module[:3]


def _ms(seconds: float) -> str:
    return str(round(seconds * 1000))


def render_analysis(an, report) -> str:
    rows = [("module", "deps", "internal")]
    for m in sorted(an.module_deps):
        rows.append((m, ", ".join(sorted(an.module_deps[m])) or "-",
                     ", ".join(sorted(an.internal[m])) or "-"))
    lines = [_table(rows), "", "interaction: " + (", ".join(sorted(an.interaction)) or "-")]
    for w in an.warnings:
        lines.append(str(w))
    if report is not None:
        lines += ["", "constraints:"]
        rows = []
        for m in dict.fromkeys(r.module for r in report.results):
            rows.append((f"  {m}",) + tuple(f"{n}: {report.get(m, n).verdict}" for n in (1, 2, 3, 4)))
        lines.append(_table(rows))
        for r in report.failures():
            for v in r.violations:
                at = f" ({v.span})" if v.span else ""
                lines.append(f"  - {r.module} constraint {r.constraint}: {v.detail}{at}")
    return "\n".join(lines) + "\n"


def _invariant_lines(transfer: dict) -> list:
    if not transfer:
        return ["invariants: no invariants declared"]
    return [f"invariant {k}: {v}" for k, v in sorted(transfer.items())]


def render_compositional(comp, direct=None) -> str:
    rows = [("check", "verdict", "states", "transitions", "time_ms")]
    if comp.abstract is not None:
        a = comp.abstract
        rows.append(("T_A", a.verdict, a.distinct_states, a.transitions, _ms(a.elapsed)))
    for m in comp.modules:
        v = m.verdict
        rows.append((f"T_{_short(m.module)}", v.verdict, v.distinct_states, v.transitions,
                     _ms(v.elapsed)))
    if comp.abstract is not None:
        rows.append(("T_comp", "", f"max {comp.max_states()}", "", _ms(comp.t_comp)))
    if direct is not None:
        r = direct.refinement
        rows.append(("T_direct", r.verdict, r.distinct_states, r.transitions, _ms(r.elapsed)))
        cost = cost_comparison(comp, direct)
        if cost is not None and cost.ratio is not None:
            rows.append(("ratio", "", f"{cost.state_ratio:.2f}", "", f"{cost.ratio:.2f}"))
    lines = [_table(rows), ""] if len(rows) > 1 else []
    bad = comp.constraints.failures()
    for r in bad:
        for v in r.violations:
            at = f" ({v.span})" if v.span else ""
            lines.append(f"constraint {r.constraint} fails for {r.module}: {v.detail}{at}")
    for m in comp.modules:
        if m.verdict.verdict == "fails":
            lines.append(f"C_{m.module} => A fails at step {m.verdict.step}: {m.verdict.reason}"
                         + (f" ({m.verdict.abstract_action})" if m.verdict.abstract_action else ""))
    if comp.abstract is not None and comp.abstract.violation is not None:
        lines.append(f"A violates {comp.abstract.violation.invariant}")
    lines.append(f"conclusion: {comp.conclusion}")
    if direct is not None:
        lines.append(f"direct: S => A {direct.refinement.verdict}; exploration of S "
                     f"{direct.exploration.verdict} ({direct.exploration.distinct_states} states)")
    lines += _invariant_lines(comp.transfer)
    return "\n".join(lines) + "\n"


def render_direct(d, invariant_names: list) -> str:
    r, e = d.refinement, d.exploration
    rows = [("check", "verdict", "states", "transitions", "time_ms"),
            ("S => A", r.verdict, r.distinct_states, r.transitions, _ms(r.elapsed)),
            ("explore S", e.verdict, e.distinct_states, e.transitions, _ms(e.elapsed))]
    lines = [_table(rows), ""]
    if r.verdict == "fails":
        lines.append(f"refinement fails at step {r.step}: {r.reason}")
    if e.violation is not None:
        lines.append(f"invariant {e.violation.invariant} violated at depth {len(e.violation.trace)}")
    if not invariant_names:
        lines.append("invariants: no invariants declared")
    return "\n".join(lines) + "\n"


# --- helpers ---------------------------------------------------------------------------


def _bounds(args) -> Bounds:
    workers = args.workers if args.workers is not None else default_workers()
    return Bounds(args.max_states, args.max_depth, args.deadlock_error, workers)


def _load(args):
    root = load_spec(args.spec) if args.spec else None
    man = load_manifest(args.manifest, root) if args.manifest else None
    if man is not None:
        root = man.root
    if root is None:
        raise SpecError([])
    return root, man


def _emit(text: str, args) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _source(args, target: str) -> dict:
    return {"spec": os.path.abspath(args.spec) if args.spec else None,
            "manifest": os.path.abspath(args.manifest) if args.manifest else None,
            "target": target}


def _write_evidence(args, target: str, evidence: dict) -> None:
    evidence = dict(evidence)
    evidence["source"] = _source(args, target)
    with open(args.trace_out, "w", encoding="utf-8") as fh:
        fh.write(_json(evidence))
    print(f"counterexample written to {args.trace_out}", file=sys.stderr)


def _comp_evidence(args, comp) -> None:
    if comp.abstract is not None and comp.abstract.violation is not None:
        v = comp.abstract.violation
        _write_evidence(args, "A", v.trace.to_json() | {"invariant": v.invariant})
        return
    for m in comp.modules:
        if m.verdict.verdict == "fails":
            _write_evidence(args, f"C_{m.module}", m.verdict.to_json(False)["evidence"])
            return


def _direct_evidence(args, d) -> None:
    if d.refinement.verdict == "fails":
        _write_evidence(args, "S", d.refinement.to_json(False)["evidence"])
    elif d.exploration.violation is not None:
        v = d.exploration.violation
        _write_evidence(args, "S", v.trace.to_json() | {"invariant": v.invariant})
    elif d.exploration.verdict == "deadlock-found" and d.exploration.deadlock is not None:
        _write_evidence(args, "S", d.exploration.deadlock.to_json() | {"deadlock": True})


def _comp_code(comp) -> int:
    if comp.concluded:
        return EXIT_OK
    return EXIT_INCONCLUSIVE if comp.conclusion.startswith("blocked: inconclusive") else EXIT_FAIL


def _direct_code(d) -> int:
    if d.refinement.verdict == "fails" or d.exploration.verdict in (
            "invariant-violated", "deadlock-found", "transition-failed"):
        return EXIT_FAIL
    if d.refinement.verdict == "inconclusive" or d.exploration.verdict == "bound-exceeded":
        return EXIT_INCONCLUSIVE
    return EXIT_OK


# --- commands --------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    root, man = _load(args)
    an = analyze(root)
    report = check_abstraction_constraints(root, man, an) if man is not None else None
    for w in an.warnings:
        print(str(w), file=sys.stderr)
    if args.format == "json":
        _emit(_json(analysis_json(an, report)), args)
    else:
        _emit(render_analysis(an, report), args)
    return EXIT_OK if report is None or report.passed else EXIT_FAIL


def cmd_check(args) -> int:
    root, man = _load(args)
    comp = compositional_check(root, man, _bounds(args))
    _comp_evidence(args, comp)
    _emit(_json(comp.to_json()) if args.format == "json" else render_compositional(comp), args)
    return _comp_code(comp)


def cmd_direct(args) -> int:
    root, man = _load(args)
    d = direct_check(root, man, _bounds(args))
    _direct_evidence(args, d)
    names = [i.name for i in root.invariants] + [i.name for i in man.invariants]
    _emit(_json(d.to_json()) if args.format == "json" else render_direct(d, names), args)
    return _direct_code(d)


def cmd_compare(args) -> int:
    root, man = _load(args)
    bounds = _bounds(args)
    comp = compositional_check(root, man, bounds)
    d = direct_check(root, man, bounds)
    _comp_evidence(args, comp)
    if comp.concluded:
        _direct_evidence(args, d)
    if args.format == "json":
        cost = cost_comparison(comp, d)
        _emit(_json({"compositional": comp.to_json(), "direct": d.to_json(),
                     "cost": None if cost is None else cost.to_json()}), args)
    else:
        _emit(render_compositional(comp, d), args)
    codes = {_comp_code(comp), _direct_code(d)}
    if EXIT_FAIL in codes:
        return EXIT_FAIL
    return EXIT_INCONCLUSIVE if EXIT_INCONCLUSIVE in codes else EXIT_OK


def _replay_target(args, recorded: dict):
    spec_path = args.spec or recorded.get("spec")
    man_path = args.manifest or recorded.get("manifest")
    target = args.target or recorded.get("target") or "S"
    root = load_spec(spec_path) if spec_path else None
    if target == "S" and root is not None:
        return root, target
    if man_path is None:
        raise SpecError([])
    man = load_manifest(man_path, root)
    if target == "S":
        return man.root, target
    if target == "A":
        return build_abstract_spec(man.root, man).spec, target
    if target.startswith("C_"):
        return build_compositional_spec(man.root, man, target[2:]).spec, target
    raise BuildError(f"unknown replay target {target!r} (expected S, A or C_<module>)")


def cmd_replay(args) -> int:
    try:
        with open(args.trace, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        print(f"{args.trace}:1:1: error[E-io]: no such file: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"{args.trace}:{exc.lineno}:{exc.colno}: error[E-json]: {exc.msg}", file=sys.stderr)
        return EXIT_USAGE
    spec, target = _replay_target(args, data.get("source") or {})
    try:
        trace = Trace.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        print(f"{args.trace}:1:1: error[E-trace]: malformed trace: {exc}", file=sys.stderr)
        return EXIT_USAGE
    res = trace_replay(spec, trace)
    if args.format == "json":
        _emit(_json({"target": target, "valid": res.valid, "step": res.step,
                     "reason": res.reason, "length": len(trace)}), args)
    elif res.valid:
        _emit(f"valid: {len(trace)} steps replay in {target}\n", args)
    else:
        _emit(f"invalid at step {res.step}: {res.reason}\n", args)
    return EXIT_OK if res.valid else EXIT_FAIL


def cmd_generate(args) -> int:
    from .generator import GenConfig, generate

    inst = generate(args.seed, GenConfig(mutate=args.mutate))
    print(inst.write(args.out))
    return EXIT_OK


def crossval(seed: int, count: int) -> list:
    """One row per instance: seed, flags, compositional conclusion, direct verdict, agreement."""
    from .generator import instances

    rows = []
    for inst in instances(count, seed):
        man = inst.load()
        comp = compositional_check(man.root, man)
        d = direct_check(man.root, man)
        agree = comp.concluded == d.holds
        rows.append({"seed": inst.seed, "leaked": inst.leaked, "mutated": inst.mutated,
                     "conclusion": comp.conclusion, "direct": d.refinement.verdict,
                     "agree": agree})
    return rows


def cmd_crossval(args) -> int:
    rows = crossval(args.seed, args.count)
    bad = [r for r in rows if not r["agree"]]
    if args.format == "json":
        _emit(_json({"instances": rows, "disagreements": len(bad)}), args)
    else:
        table = [("seed", "leaked", "mutated", "conclusion", "direct", "agree")]
        table += [(r["seed"], r["leaked"], r["mutated"], r["conclusion"], r["direct"], r["agree"])
                  for r in rows]
        concluded = sum(r["conclusion"] == "S => A" for r in rows)
        _emit(_table(table) + f"\n\n{len(rows)} instances, {concluded} concluded S => A, "
              f"{len(bad)} disagreements\n", args)
    return EXIT_OK if not bad else EXIT_FAIL


COMMANDS = {"analyze": cmd_analyze, "check": cmd_check, "direct": cmd_direct,
            "compare": cmd_compare, "replay": cmd_replay, "generate": cmd_generate,
            "crossval": cmd_crossval}


def run(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "command", None) in ("check", "direct", "compare", "analyze") \
                and not args.spec and not getattr(args, "manifest", None):
            print("ipa-check: error: a specification or --manifest is required", file=sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except SpecError as exc:
        for d in exc.diagnostics:
            print(str(d), file=sys.stderr)
        if not exc.diagnostics:
            print("ipa-check: error: a manifest is required for this target", file=sys.stderr)
        return EXIT_USAGE
    except BuildError as exc:
        print(f"ipa-check: error[E-build]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EvalError as exc:
        loc = f"{exc.span}: " if exc.span else ""
        print(f"{loc}error[E-eval]: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ipa-check: error[E-io]: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
