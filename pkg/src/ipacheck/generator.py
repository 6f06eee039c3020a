"""Seeded generator of small multi-module specs with ready-made abstractions.

Every module owns some *hidden* variables, touched only by internal actions,
and some *visible* actions over shared and visible-local variables. The
abstraction of a module keeps the visible actions verbatim and deletes the
internal ones, which the manifest maps to void. Update right-hand sides only
read variables the same action guards on, so constraints 1-3 and the
syntactic part of 4 hold by construction.

Two knobs produce instances whose refinement should fail:

* ``leak``: a visible guard also reads a hidden variable, so deleted internal
  steps become visible to A;
* ``mutate``: one abstract update is rewritten, so the mapped step lands in
  the wrong post-state.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from typing import Optional

from .parser import parse_manifest, parse_spec


@dataclass
class GenConfig:
    modules: tuple = (2, 3)         # inclusive range of module count
    shared: tuple = (1, 2)          # shared variables
    locals_: tuple = (0, 1)         # visible locals per module
    hidden: tuple = (1, 2)          # hidden locals per module
    visible_actions: tuple = (1, 2)
    internal_actions: tuple = (0, 1)
    domain: tuple = (2, 4)          # values 0..k-1
    leak_rate: float = 0.15
    mutate: bool = False


@dataclass
class Instance:
    seed: int
    root_text: str
    abstraction_texts: dict        # module -> source text
    manifest_text: str
    leaked: bool = False
    mutated: bool = False
    notes: list = field(default_factory=list)

    def load(self, directory: Optional[str] = None):
        """Parse into an IpaManifest (root and abstractions attached)."""
        base = directory or f"<gen{self.seed}>"
        root = parse_spec(self.root_text, os.path.join(base, "spec.ipa"))
        abstractions = {m: parse_spec(t, os.path.join(base, f"abs_{m}.ipa"))
                        for m, t in self.abstraction_texts.items()}
        return parse_manifest(self.manifest_text, os.path.join(base, "manifest.ipam"),
                              root, abstractions)

    def write(self, directory: str) -> str:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "spec.ipa"), "w", encoding="utf-8") as fh:
            fh.write(self.root_text)
        for m, t in self.abstraction_texts.items():
            with open(os.path.join(directory, f"abs_{m}.ipa"), "w", encoding="utf-8") as fh:
                fh.write(t)
        path = os.path.join(directory, "manifest.ipam")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.manifest_text)
        return path


@dataclass
class _Action:
    name: str
    guards: list
    updates: list  # (var, rhs)

    def render(self) -> list:
        out = [f"  action {self.name}"]
        out.append("    when " + " /\\ ".join(self.guards))
        for v, e in self.updates:
            out.append(f"    then {v}' = {e}")
        return out


def _between(rng: random.Random, lo_hi: tuple) -> int:
    return rng.randint(lo_hi[0], lo_hi[1])


def _atom(rng: random.Random, v: str, k: int) -> str:
    c = rng.randrange(k)
    op = rng.choice(["<", "<=", ">=", "/=", "="])
    if op == "<" and c == 0:
        c = 1
    return f"{v} {op} {c}"


def _rhs(rng: random.Random, v: str, readable: list, k: int) -> str:
    kind = rng.randrange(4)
    if kind == 0:
        return f"if {v} < {k - 1} then {v} + 1 else 0"
    if kind == 1:
        return f"if {v} > 0 then {v} - 1 else {k - 1}"
    if kind == 2 and len(readable) > 1:
        return rng.choice([r for r in readable if r != v])
    return str(rng.randrange(k))


def _mutated_rhs(v: str, rhs: str, k: int) -> str:
    # any single change that is not an identity on the domain
    if rhs == v:
        return f"if {v} < {k - 1} then {v} + 1 else 0"
    return v if not rhs.isdigit() else str((int(rhs) + 1) % k)


def generate(seed: int, config: GenConfig = GenConfig()) -> Instance:
    rng = random.Random(seed)
    k = _between(rng, config.domain)
    n_mod = _between(rng, config.modules)
    mods = [f"M{i}" for i in range(n_mod)]
    shared = [f"g{i}" for i in range(_between(rng, config.shared))]
    locals_ = {m: [f"{m.lower()}_l{j}" for j in range(_between(rng, config.locals_))] for m in mods}
    hidden = {m: [f"{m.lower()}_h{j}" for j in range(_between(rng, config.hidden))] for m in mods}

    leaked = False
    visible: dict = {}
    internal: dict = {}
    for m in mods:
        pool = shared + locals_[m]
        acts = []
        for j in range(_between(rng, config.visible_actions)):
            writes = rng.sample(pool, min(len(pool), rng.randint(1, 2)))
            reads = list(writes)
            extra = [v for v in pool if v not in reads]
            if extra and rng.random() < 0.5:
                reads.append(rng.choice(extra))
            if rng.random() < config.leak_rate:
                reads.append(rng.choice(hidden[m]))
                leaked = True
            guards = [_atom(rng, v, k) for v in reads]
            updates = [(v, _rhs(rng, v, reads, k)) for v in writes]
            acts.append(_Action(f"{m}_v{j}", guards, updates))
        visible[m] = acts
        acts = []
        for j in range(_between(rng, config.internal_actions)):
            h = rng.choice(hidden[m])
            acts.append(_Action(f"{m}_i{j}", [_atom(rng, h, k)], [(h, _rhs(rng, h, [h], k))]))
        internal[m] = acts

    mutated = False
    abstract_visible = {m: [_Action(a.name, list(a.guards), list(a.updates)) for a in acts]
                        for m, acts in visible.items()}
    notes = []
    if config.mutate:
        m = rng.choice(mods)
        a = rng.choice(abstract_visible[m])
        i = rng.randrange(len(a.updates))
        v, rhs = a.updates[i]
        a.updates[i] = (v, _mutated_rhs(v, rhs, k))
        mutated = True
        notes.append(f"mutated {a.name}: {v}' = {a.updates[i][1]} (was {rhs})")

    all_vars = shared + [v for m in mods for v in locals_[m] + hidden[m]]

    def header(name: str, vs: list) -> list:
        out = [f"spec {name}", "", "vars"]
        out += [f"  {v} : 0..{k - 1}" for v in vs]
        out += ["", "init"]
        out += [f"  {v} = 0" for v in vs]
        return out + [""]

    lines = [f"\\* generated, seed {seed}", ""] + header(f"Gen{seed}", all_vars)
    for m in mods:
        lines.append(f"module {m}")
        for a in visible[m] + internal[m]:
            lines += a.render()
    root_text = "\n".join(lines) + "\n"

    abs_texts = {}
    for m in mods:
        used = set()
        for a in abstract_visible[m]:
            for g in a.guards:
                used.update(t for t in g.replace("'", " ").split() if t in all_vars)
            for v, e in a.updates:
                used.add(v)
                used.update(t for t in e.split() if t in all_vars)
        vs = [v for v in all_vars if v in used]
        al = header(f"Gen{seed}Abs{m}", vs) + [f"module Abs{m}"]
        for a in abstract_visible[m]:
            al += a.render()
        abs_texts[m] = "\n".join(al) + "\n"

    man = ['spec "spec.ipa"', ""]
    man += [f'abstract {m} = "abs_{m}.ipa"' for m in mods]
    man.append("")
    for m in mods:
        for a in visible[m]:
            man.append(f"map {m}.{a.name} -> Abs{m}.{a.name}")
        for a in internal[m]:
            man.append(f"map {m}.{a.name} -> void")
    return Instance(seed, root_text, abs_texts, "\n".join(man) + "\n", leaked, mutated, notes)


def instances(count: int, base_seed: int = 0, mutate_every: int = 4) -> list:
    """``count`` instances; every ``mutate_every``-th one carries a mutation."""
    out = []
    for i in range(count):
        cfg = GenConfig(mutate=mutate_every > 0 and i % mutate_every == mutate_every - 1)
        out.append(generate(base_seed + i, cfg))
    return out
