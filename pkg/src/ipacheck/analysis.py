"""Dependency, interaction and internal variables; abstraction constraints.

Everything here is syntactic and whole-action. Read sets look through
definitions, ignore bound names, and include the state variables read by
the domain of any parameter the expression mentions (a parameter drawn from
``repNet`` carries information out of ``repNet``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import syntax as S
from .parser import Diagnostic
from .syntax import SourceSpan


class AnalysisBug(AssertionError):
    """An internal invariant of the analysis failed; never a user error."""


# --- read sets ---------------------------------------------------------------


def _params_used(e) -> set:
    return {n.name for n in S.walk(e) if isinstance(n, S.ParamRef)}


def expr_reads(e, action: Optional[S.Action], defs: dict) -> frozenset:
    """State variables an expression depends on, including through parameters."""
    out = set(S.state_reads(e, defs))
    if action is not None and action.params:
        domains = {p.name: p.domain for p in action.params}
        todo = [n for n in _params_used(e) if n in domains]
        seen: set = set()
        while todo:
            p = todo.pop()
            if p in seen:
                continue
            seen.add(p)
            out |= S.state_reads(domains[p], defs)
            todo.extend(n for n in _params_used(domains[p]) if n in domains)
    return frozenset(out)


def action_deps(a: S.Action, defs: Optional[dict] = None) -> frozenset:
    """D_a: variables read by the enabling conditions (parameter domains included)."""
    defs = defs or {}
    out: set = set()
    for g in a.guards:
        out |= S.state_reads(g, defs)
    for p in a.params:
        out |= S.state_reads(p.domain, defs)
    return frozenset(out)


def update_reads(a: S.Action, defs: Optional[dict] = None) -> dict:
    """variable -> read set of the right-hand side assigned to it by ``a``."""
    defs = defs or {}
    return {u.var: expr_reads(u.expr, a, defs) for u in a.updates}


# --- fixpoints -------------------------------------------------------------


def module_deps(spec: S.Spec) -> dict:
    """D_M for every module: guard reads, closed under reads of updates to D_M."""
    defs = spec.def_table()
    out = {}
    for m in spec.modules:
        deps = set()
        for a in m.actions:
            deps |= action_deps(a, defs)
        reads = [update_reads(a, defs) for a in m.actions]
        changed = True
        while changed:
            changed = False
            for r in reads:
                for v, vs in r.items():
                    if v in deps and not vs <= deps:
                        deps |= vs
                        changed = True
        out[m.name] = frozenset(deps)
    return out


def interaction_vars(spec: S.Spec, deps: dict) -> frozenset:
    """I: pairwise D intersections, closed under the assignment rules."""
    names = [m.name for m in spec.modules]
    inter: set = set()
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            inter |= deps[a] & deps[b]
    shared = frozenset(inter)
    defs = spec.def_table()
    writes = [(m.name, update_reads(a, defs)) for m in spec.modules for a in m.actions]
    changed = True
    while changed:
        changed = False
        for mod, r in writes:
            for v, vs in r.items():
                # rule 2: v in I, measured against the writer's D
                extra = vs - deps[mod] - inter if v in inter else set()
                # rule 3: v local to a single D_{M_i}, measured against that
                # D_{M_i}. "Local" is judged against the pairwise intersections
                # only; judging it against the growing I is not monotone and
                # makes the result depend on the iteration order.
                for owner in names:
                    if v in deps[owner] and v not in shared:
                        extra = extra | (vs - deps[owner] - inter)
                if extra:
                    inter |= extra
                    changed = True
    return frozenset(inter)


def internal_vars(deps: dict, interaction: frozenset) -> dict:
    """L_M = D_M minus I; checks pairwise disjointness of L_M with other D."""
    out = {m: frozenset(d - interaction) for m, d in deps.items()}
    for m, local in out.items():
        for other, d in deps.items():
            if other != m and local & d:
                raise AnalysisBug(
                    f"internal variables {sorted(local & d)} of {m} are dependency "
                    f"variables of {other}")
    return out


@dataclass(frozen=True)
class VarAnalysis:
    action_deps: dict
    module_deps: dict
    interaction: frozenset
    internal: dict
    warnings: tuple = ()

    def owner_of_internal(self, var: str) -> Optional[str]:
        for m, vs in self.internal.items():
            if var in vs:
                return m
        return None

    def to_json(self) -> dict:
        return {
            "modules": {
                m: {"deps": sorted(self.module_deps[m]), "internal": sorted(self.internal[m])}
                for m in sorted(self.module_deps)
            },
            "actions": {a: sorted(vs) for a, vs in sorted(self.action_deps.items())},
            "interaction": sorted(self.interaction),
        }


def analyze(spec: S.Spec) -> VarAnalysis:
    defs = spec.def_table()
    deps = module_deps(spec)
    inter = interaction_vars(spec, deps)
    internal = internal_vars(deps, inter)
    warnings = []
    for m in spec.modules:
        allowed = deps[m.name] | inter
        for a in m.actions:
            for u in a.updates:
                if u.var not in allowed:
                    warnings.append(Diagnostic(
                        "warning", "W-blind-write",
                        f"action {a.name} of {m.name} writes {u.var}, which is neither a "
                        f"dependency variable of {m.name} nor an interaction variable",
                        u.span or a.span or SourceSpan(spec.origin, 1, 1)))
    return VarAnalysis({a.name: action_deps(a, defs) for a in spec.actions}, deps, inter,
                       internal, tuple(warnings))


# --- abstraction constraints ----------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    detail: str
    span: Optional[SourceSpan] = None
    names: tuple = ()  # offending variables or actions

    def to_json(self) -> dict:
        return {"detail": self.detail, "at": str(self.span) if self.span else None,
                "names": list(self.names)}


@dataclass(frozen=True)
class ConstraintResult:
    module: str
    constraint: int
    verdict: str  # "pass" | "fail" | "syntactic-pass"
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return self.verdict != "fail"

    def to_json(self) -> dict:
        return {"module": self.module, "constraint": self.constraint, "verdict": self.verdict,
                "violations": [v.to_json() for v in self.violations]}


@dataclass
class ConstraintReport:
    results: list = field(default_factory=list)
    abstract_deps: dict = field(default_factory=dict)  # module -> D of its abstraction

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.results)

    def failures(self) -> list:
        return [r for r in self.results if not r.ok]

    def get(self, module: str, constraint: int) -> ConstraintResult:
        for r in self.results:
            if r.module == module and r.constraint == constraint:
                return r
        raise KeyError((module, constraint))

    def to_json(self) -> list:
        return [r.to_json() for r in self.results]


def _result(module, n, violations, ok_verdict="pass") -> ConstraintResult:
    return ConstraintResult(module, n, "fail" if violations else ok_verdict, tuple(violations))


def _normal(e, defs: dict):
    return S.strip_spans(S.expand_defs(e, defs))


def check_abstraction_constraints(spec: S.Spec, manifest, analysis: VarAnalysis) -> ConstraintReport:
    """Constraints 1-3 and the syntactic part of constraint 4, per module."""
    report = ConstraintReport()
    inter = analysis.interaction
    root_defs = spec.def_table()
    abs_specs = manifest.abstractions
    abs_deps = {}
    for m in spec.modules:
        ab = abs_specs[m.name]
        abs_deps[m.name] = module_deps(ab)[ab.modules[0].name]
    report.abstract_deps = abs_deps
    all_abs_actions = [(m.name, a, abs_specs[m.name].def_table())
                       for m in spec.modules for a in abs_specs[m.name].actions]
    root_vars = set(spec.var_names)

    for m in spec.modules:
        ab = abs_specs[m.name]
        ab_defs = ab.def_table()
        d_abs = abs_deps[m.name]
        d_conc = analysis.module_deps[m.name]
        allowed = inter | d_conc

        # (1) D of the abstraction inside I and D of the concrete module
        bad = []
        for v in sorted(d_abs):
            if v in root_vars:
                if v not in allowed:
                    bad.append(Violation(
                        f"abstraction of {m.name} depends on {v}, an internal variable of "
                        f"{analysis.owner_of_internal(v) or 'no module'}", _var_span(ab, v), (v,)))
            else:
                reads = S.state_reads(manifest.refine[v], root_defs)
                outside = sorted(reads - allowed)
                if outside:
                    bad.append(Violation(
                        f"abstract-only variable {v} is refined from {', '.join(outside)}, "
                        f"outside I and the dependency variables of {m.name}",
                        _var_span(ab, v), tuple(outside)))
        report.results.append(_result(m.name, 1, bad))

        # (2) updates of interaction variables read only D of the abstraction and I
        bad = []
        for a in ab.actions:
            for v, reads in update_reads(a, ab_defs).items():
                if v in inter:
                    outside = sorted(reads - d_abs - inter)
                    if outside:
                        bad.append(Violation(
                            f"{a.name} assigns interaction variable {v} from {', '.join(outside)}",
                            _upd_span(a, v), tuple(outside)))
        report.results.append(_result(m.name, 2, bad))

        # (3) updates of internal variables of the abstraction, by any abstract action
        local_abs = d_abs - inter
        bad = []
        for _, a, defs in all_abs_actions:
            for v, reads in update_reads(a, defs).items():
                if v in local_abs:
                    outside = sorted(reads - d_abs - inter)
                    if outside:
                        bad.append(Violation(
                            f"{a.name} assigns {v} (internal to the abstraction of {m.name}) "
                            f"from {', '.join(outside)}", _upd_span(a, v), tuple(outside)))
        report.results.append(_result(m.name, 3, bad))

        # (4) syntactic part
        bad = []
        others_local = set()
        for other, local in analysis.internal.items():
            if other != m.name:
                others_local |= local
        own_local = analysis.internal[m.name]
        for a in m.actions:
            entry = manifest.action_map[a.name]
            if entry.target is None:
                stray = sorted(u.var for u in a.updates if u.var not in own_local)
                if stray:
                    bad.append(Violation(
                        f"{a.name} is mapped to void but assigns {', '.join(stray)}, "
                        f"outside the internal variables of {m.name}", a.span, tuple(stray)))
                continue
            target = ab.action(entry.target)
            if entry.bindings is None:
                subst = {p.name: S.ParamRef(q.name) for p, q in zip(target.params, a.params)}
            else:
                subst = {p.name: S.strip_spans(S.expand_defs(b, root_defs))
                         for p, b in zip(target.params, entry.bindings)}
            tgt_updates = target.updated()
            for u in a.updates:
                if u.var not in others_local:
                    continue
                if u.var not in tgt_updates:
                    bad.append(Violation(
                        f"{a.name} assigns {u.var} (internal to another module) but "
                        f"{target.name} does not", u.span, (u.var,)))
                    continue
                mine = _normal(u.expr, root_defs)
                theirs = S.substitute(_normal(tgt_updates[u.var], ab_defs), subst)
                if mine != theirs:
                    bad.append(Violation(
                        f"{target.name} does not preserve the assignment to {u.var} of {a.name}",
                        u.span, (u.var,)))
        report.results.append(_result(m.name, 4, bad, "syntactic-pass"))
    return report


def _var_span(spec: S.Spec, v: str):
    for d in spec.variables:
        if d.name == v:
            return d.span
    return None


def _upd_span(a: S.Action, v: str):
    for u in a.updates:
        if u.var == v:
            return u.span or a.span
    return a.span


def analysis_json(analysis: VarAnalysis, report: Optional[ConstraintReport] = None) -> dict:
    out = analysis.to_json()
    out["warnings"] = [str(w) for w in analysis.warnings]
    if report is not None:
        out["constraints"] = report.to_json()
        out["abstract_deps"] = {m: sorted(v) for m, v in sorted(report.abstract_deps.items())}
    return out


def permuted(spec: S.Spec, order: Iterable[int]) -> S.Spec:
    """Same spec with actions reordered (for order-independence checks)."""
    from dataclasses import replace

    flat = [(m.name, a) for m in spec.modules for a in m.actions]
    perm = [flat[i] for i in order]
    modules = []
    for m in spec.modules:
        acts = tuple(a for mod, a in perm if mod == m.name)
        modules.append(replace(m, actions=acts))
    mods = list(modules)
    firsts = {mod: k for k, (mod, _) in reversed(list(enumerate(perm)))}
    mods.sort(key=lambda mm: firsts.get(mm.name, 0))
    return replace(spec, modules=tuple(mods))
