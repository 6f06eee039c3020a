"""Compositional specifications C_i, the abstract specification A, and the
drivers for compositional and direct checking.

Variables outside a composed spec's scope are irrelevant to its execution:
updates to them are dropped, and reading one is a build error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

from . import syntax as S
from .analysis import (ConstraintReport, VarAnalysis, analyze, check_abstraction_constraints,
                       module_deps)
from .explorer import Bounds, ExplorationReport, explore
from .parser import Diagnostic, MapEntry, SpecError
from .refinement import RefinementVerdict, StateMapping, check_strong_refinement


class BuildError(Exception):
    pass


# --- declaration merging -----------------------------------------------------


def _site(spec: S.Spec, d) -> str:
    return str(d.span) if d.span is not None else spec.origin


def _merge_named(kind: str, groups: list, diags: list, strip=True) -> list:
    """Union of same-kind declarations; equal duplicates collapse, others clash."""
    seen: dict = {}
    out = []
    for spec, decls in groups:
        for d in decls:
            key = S.strip_spans(d) if strip else d
            if d.name in seen:
                prev_spec, prev, prev_key = seen[d.name]
                if prev_key != key:
                    diags.append(Diagnostic(
                        "error", "E-clash",
                        f"{kind} {d.name} is declared differently at {_site(prev_spec, prev)} "
                        f"and {_site(spec, d)}",
                        d.span or S.SourceSpan(spec.origin, 1, 1)))
                continue
            seen[d.name] = (spec, d, key)
            out.append(d)
    return out


def _merge_declarations(root: S.Spec, abstractions: list) -> tuple:
    specs = [root] + abstractions
    diags: list = []
    consts = _merge_named("constant", [(s, s.consts) for s in specs], diags)
    sorts = _merge_named("sort", [(s, s.sorts) for s in specs], diags)
    defs = _merge_named("definition", [(s, s.defs) for s in specs], diags)
    variables = _merge_named("variable", [(s, s.variables) for s in specs], diags)
    if diags:
        raise SpecError(diags)
    return consts, sorts, defs, variables


def merged_scope_spec(root: S.Spec, abstractions: dict) -> S.Spec:
    """Declarations of the root spec and every abstraction, without actions."""
    consts, sorts, defs, variables = _merge_declarations(root, list(abstractions.values()))
    init = tuple(S.Decl(d.name, S.Lit(True)) for d in variables)
    return S.Spec(f"{root.name}_scope", tuple(consts), tuple(sorts), tuple(defs),
                  tuple(variables), init, (), (), origin=root.origin)


# --- composed specifications ----------------------------------------------------


@dataclass
class ComposedSpec:
    spec: S.Spec
    provenance: dict  # action -> "concrete(M)" | "abstract(AbsM)"
    variable_scope: frozenset
    dropped_updates: tuple = ()  # (action, variable) pairs outside the scope


def _subst_init(e, root_init: dict):
    def fn(n):
        if isinstance(n, S.VarRef):
            return root_init[n.name]
        return n

    return S.transform(e, fn)


def _build(name: str, root: S.Spec, manifest, scope: frozenset, parts: list,
           invariants: tuple = ()) -> ComposedSpec:
    """``parts``: [(module name, actions, provenance tag)]."""
    abstractions = [manifest.abstractions[m.name] for m in root.modules]
    consts, sorts, defs, variables = _merge_declarations(root, abstractions)
    def_table = {d.name: d for d in defs}
    root_vars = set(root.var_names)
    variables = [d for d in variables if d.name in scope]
    root_init = {d.name: d.value for d in root.init}
    init = []
    for d in variables:
        if d.name in root_vars:
            init.append(S.Decl(d.name, root_init[d.name], d.span))
        else:
            init.append(S.Decl(d.name, _subst_init(manifest.refine[d.name], root_init), d.span))
    modules = []
    provenance = {}
    dropped = []
    for mod_name, actions, tag in parts:
        kept = []
        for a in actions:
            ups = []
            for u in a.updates:
                if u.var in scope:
                    ups.append(u)
                else:
                    dropped.append((a.name, u.var))
            a = replace(a, module=mod_name, updates=tuple(ups))
            reads = set()
            for e in list(a.guards) + [p.domain for p in a.params] + [u.expr for u in a.updates]:
                reads |= S.state_reads(e, def_table)
            outside = reads - scope
            if outside:
                raise BuildError(f"action {a.name} in {name} reads {', '.join(sorted(outside))}, "
                                 f"outside the variable scope")
            if a.name in provenance:
                raise BuildError(f"action name {a.name} occurs twice in {name}")
            provenance[a.name] = tag
            kept.append(a)
        modules.append(S.Module(mod_name, tuple(kept)))
    spec = S.Spec(name, tuple(consts), tuple(sorts), tuple(defs), tuple(variables), tuple(init),
                  tuple(modules), tuple(invariants), origin=root.origin)
    return ComposedSpec(spec, provenance, scope, tuple(dropped))


def _abs_deps(manifest, root: S.Spec) -> dict:
    out = {}
    for m in root.modules:
        ab = manifest.abstractions[m.name]
        out[m.name] = module_deps(ab)[ab.modules[0].name]
    return out


def abstract_scope(root: S.Spec, manifest, analysis: VarAnalysis) -> frozenset:
    scope = set(analysis.interaction)
    for d in _abs_deps(manifest, root).values():
        scope |= d
    return frozenset(scope)


def compositional_scope(root: S.Spec, manifest, analysis: VarAnalysis, i: str) -> frozenset:
    scope = set(analysis.interaction) | analysis.module_deps[i]
    for m, d in _abs_deps(manifest, root).items():
        if m != i:
            scope |= d
    return frozenset(scope)


def build_abstract_spec(root: S.Spec, manifest, analysis: Optional[VarAnalysis] = None
                        ) -> ComposedSpec:
    analysis = analysis or analyze(root)
    scope = abstract_scope(root, manifest, analysis)
    parts = []
    for m in root.modules:
        ab = manifest.abstractions[m.name]
        am = ab.modules[0]
        parts.append((am.name, am.actions, f"abstract({am.name})"))
    return _build(f"{root.name}_A", root, manifest, scope, parts)


def build_compositional_spec(root: S.Spec, manifest, i: str,
                             analysis: Optional[VarAnalysis] = None) -> ComposedSpec:
    analysis = analysis or analyze(root)
    scope = compositional_scope(root, manifest, analysis, i)
    a_scope = abstract_scope(root, manifest, analysis)
    root_vars = set(root.var_names)
    if not (a_scope & root_vars) <= scope:
        raise BuildError(f"scope of C_{i} does not contain the root variables of A")
    parts = []
    for m in root.modules:
        if m.name == i:
            parts.append((m.name, m.actions, f"concrete({m.name})"))
        else:
            am = manifest.abstractions[m.name].modules[0]
            parts.append((am.name, am.actions, f"abstract({am.name})"))
    return _build(f"{root.name}_C_{i}", root, manifest, scope, parts)


# --- mappings ----------------------------------------------------------------------


def _ident(a: S.Action) -> MapEntry:
    return MapEntry(a.name, a.name, a.module)


def compose_mappings(root: S.Spec, manifest, i: str) -> tuple:
    """(g_i, gbar_i, g); asserts gbar_i after g_i equals g on every action."""
    g = dict(manifest.action_map)
    g_i = {}
    for a in root.actions:
        g_i[a.name] = _ident(a) if a.module == i else g[a.name]
    gbar = {}
    for a in root.module(i).actions:
        gbar[a.name] = g[a.name]
    for m in root.modules:
        if m.name != i:
            for b in manifest.abstractions[m.name].actions:
                gbar[b.name] = _ident(b)
    for a in root.actions:
        first = g_i[a.name]
        if first.target is None:
            composite = first
        else:
            second = gbar[first.target]
            # one of the two steps is always an identity, so bindings compose trivially
            bindings = first.bindings if second.bindings is None else second.bindings
            composite = replace(second, action=a.name, bindings=bindings)
        want = g[a.name]
        if (composite.target, composite.bindings) != (want.target, want.bindings):
            raise AssertionError(f"mapping composition differs from g at {a.name}")
    return g_i, gbar, g


def refinement_mapping(b: S.Spec, a: S.Spec, manifest) -> StateMapping:
    """Identity on shared variables; refine expressions for the others."""
    refine = {v: e for v, e in manifest.refine.items() if v not in set(b.var_names)}
    return StateMapping.identity(a, b, refine)


# --- invariants ------------------------------------------------------------


def _invariant_reads(inv, defs: dict) -> frozenset:
    return S.state_reads(inv.value, defs)


def invariants_over(spec: S.Spec, invariants: tuple, manifest=None) -> tuple:
    """Invariants rewritten over ``spec``'s variables (abstract-only variables
    are replaced by their refine expressions when absent from ``spec``)."""
    have = set(spec.var_names)
    out = []
    for inv in invariants:
        def fn(n):
            if isinstance(n, S.VarRef) and n.name not in have and manifest is not None \
                    and n.name in manifest.refine:
                return manifest.refine[n.name]
            return n

        out.append(replace(inv, value=S.transform(inv.value, fn)))
    return tuple(out)


# --- reports -------------------------------------------------------------------------


@dataclass
class ModuleCheck:
    module: str
    scope: tuple
    verdict: RefinementVerdict

    def to_json(self, durations: bool = True) -> dict:
        return {"module": self.module, "scope": list(self.scope),
                "refinement": self.verdict.to_json(durations)}


@dataclass
class CompositionalReport:
    analysis: VarAnalysis
    constraints: ConstraintReport
    abstract: Optional[ExplorationReport] = None
    abstract_scope: tuple = ()
    modules: list = field(default_factory=list)
    conclusion: str = ""
    transfer: dict = field(default_factory=dict)  # invariant -> "holds for S" | ...
    elapsed: float = 0.0

    @property
    def concluded(self) -> bool:
        return self.conclusion == CONCLUDED

    @property
    def t_comp(self) -> float:
        t = self.abstract.elapsed if self.abstract else 0.0
        return t + sum(m.verdict.elapsed for m in self.modules)

    def max_states(self) -> int:
        counts = [m.verdict.distinct_states for m in self.modules]
        if self.abstract is not None:
            counts.append(self.abstract.distinct_states)
        return max(counts, default=0)

    def module_check(self, name: str) -> ModuleCheck:
        for m in self.modules:
            if m.module == name:
                return m
        raise KeyError(name)

    def to_json(self, durations: bool = True) -> dict:
        from .analysis import analysis_json

        out = {
            "analysis": analysis_json(self.analysis, self.constraints),
            "abstract": None if self.abstract is None else {
                "scope": list(self.abstract_scope),
                "exploration": self.abstract.to_json(durations)},
            "modules": [m.to_json(durations) for m in self.modules],
            "conclusion": self.conclusion,
            "invariants": dict(sorted(self.transfer.items())),
        }
        if durations:
            out["t_comp_ms"] = round(self.t_comp * 1000)
        return out


CONCLUDED = "S => A"


def compositional_check(root: S.Spec, manifest, bounds: Bounds = Bounds(),
                        run_all: bool = True) -> CompositionalReport:
    """Constraint check, invariant check of A, then C_i => A for every module."""
    start = time.perf_counter()
    analysis = analyze(root)
    constraints = check_abstraction_constraints(root, manifest, analysis)
    report = CompositionalReport(analysis, constraints)
    if not constraints.passed:
        bad = constraints.failures()[0]
        report.conclusion = f"blocked: constraint {bad.constraint} fails for {bad.module}"
        report.transfer = {inv.name: "not established" for inv in manifest.invariants}
        report.elapsed = time.perf_counter() - start
        return report
    a = build_abstract_spec(root, manifest, analysis)
    report.abstract_scope = tuple(sorted(a.variable_scope))
    a_defs = a.spec.def_table()
    scoped, outside = [], []
    for inv in manifest.invariants:
        (scoped if _invariant_reads(inv, a_defs) <= a.variable_scope else outside).append(inv)
    report.abstract = explore(a.spec, scoped, Bounds(bounds.max_states, bounds.max_depth, False,
                                                     bounds.workers))
    blocked = ""
    if report.abstract.verdict == "invariant-violated":
        blocked = f"blocked: invariant {report.abstract.violation.invariant} violated in A"
    elif report.abstract.verdict == "bound-exceeded":
        blocked = "blocked: inconclusive at A"
    for m in root.modules:
        if blocked and not run_all:
            break
        c = build_compositional_spec(root, manifest, m.name, analysis)
        _, gbar, _ = compose_mappings(root, manifest, m.name)
        sm = refinement_mapping(c.spec, a.spec, manifest)
        verdict = check_strong_refinement(c.spec, a.spec, sm, gbar, bounds)
        report.modules.append(ModuleCheck(m.name, tuple(sorted(c.variable_scope)), verdict))
        if not blocked and verdict.verdict == "fails":
            blocked = f"blocked: C_{m.name} => A fails"
        elif not blocked and verdict.verdict == "inconclusive":
            blocked = f"blocked: inconclusive at C_{m.name}"
    report.conclusion = blocked or CONCLUDED
    for inv in scoped:
        report.transfer[inv.name] = "holds for S" if not blocked else "not established"
    for inv in outside:
        report.transfer[inv.name] = "not transferable"
    report.elapsed = time.perf_counter() - start
    return report


@dataclass
class DirectReport:
    refinement: RefinementVerdict
    exploration: ExplorationReport

    @property
    def holds(self) -> bool:
        return self.refinement.holds

    @property
    def passed(self) -> bool:
        return self.refinement.holds and self.exploration.verdict == "pass"

    @property
    def t_direct(self) -> float:
        return self.refinement.elapsed

    def to_json(self, durations: bool = True) -> dict:
        out = {"refinement": self.refinement.to_json(durations),
               "exploration": self.exploration.to_json(durations)}
        if durations:
            out["t_direct_ms"] = round(self.t_direct * 1000)
        return out


def direct_check(root: S.Spec, manifest, bounds: Bounds = Bounds(),
                 analysis: Optional[VarAnalysis] = None) -> DirectReport:
    """S => A under the manifest's mapping, plus exploration of S itself."""
    analysis = analysis or analyze(root)
    a = build_abstract_spec(root, manifest, analysis)
    sm = refinement_mapping(root, a.spec, manifest)
    refinement = check_strong_refinement(root, a.spec, sm, dict(manifest.action_map), bounds)
    invs = tuple(root.invariants) + invariants_over(root, manifest.invariants, manifest)
    exploration = explore(root, invs, Bounds(bounds.max_states, bounds.max_depth,
                                             bounds.deadlock_is_error, bounds.workers))
    return DirectReport(refinement, exploration)


@dataclass
class CostComparison:
    rows: list  # [(label, distinct states, seconds)]
    t_comp: float
    t_direct: float
    direct_states: int
    max_comp_states: int

    @property
    def ratio(self) -> Optional[float]:
        return self.t_direct / self.t_comp if self.t_comp > 0 else None

    @property
    def state_ratio(self) -> Optional[float]:
        return self.direct_states / self.max_comp_states if self.max_comp_states else None

    def to_json(self, durations: bool = True) -> dict:
        out = {"rows": [{"check": lab, "distinct_states": n} | (
            {"elapsed_ms": round(t * 1000)} if durations else {}) for lab, n, t in self.rows],
            "direct_states": self.direct_states, "max_comp_states": self.max_comp_states,
            "state_ratio": None if self.state_ratio is None else round(self.state_ratio, 3)}
        if durations:
            out["t_comp_ms"] = round(self.t_comp * 1000)
            out["t_direct_ms"] = round(self.t_direct * 1000)
            out["ratio"] = None if self.ratio is None else round(self.ratio, 3)
        return out


def cost_comparison(comp: CompositionalReport, direct: DirectReport) -> Optional[CostComparison]:
    """Only defined when both sides ran to completion."""
    if comp.abstract is None or len(comp.modules) == 0:
        return None
    if any(m.verdict.verdict == "inconclusive" for m in comp.modules):
        return None
    if direct.refinement.verdict == "inconclusive":
        return None
    rows = [("A", comp.abstract.distinct_states, comp.abstract.elapsed)]
    rows += [(f"C_{m.module}", m.verdict.distinct_states, m.verdict.elapsed) for m in comp.modules]
    return CostComparison(rows, comp.t_comp, direct.t_direct,
                          direct.refinement.distinct_states, comp.max_states())
