"""Front end for ``.ipa`` specification files and ``.ipam`` manifests.

Parsing happens in two phases: a recursive-descent parser builds a tree with
unresolved :class:`~ipacheck.syntax.Name` nodes, then :class:`Resolver`
binds every name and checks the declaration-level invariants.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from . import syntax as S
from .syntax import SourceSpan

KEYWORDS = {
    "spec", "const", "sort", "def", "vars", "init", "module", "action", "when", "then",
    "map", "refine", "invariant", "abstract", "void", "UNCHANGED", "EXCEPT", "if", "else",
    "TRUE", "FALSE", "in", "forall", "exists", "Bool",
}
TOP_LEVEL = {"const", "sort", "def", "vars", "init", "module", "invariant", "action"}

_BACKSLASH_OPS = {
    "in": "\\in", "notin": "\\notin", "union": "\\union", "cup": "\\union",
    "intersect": "\\intersect", "cap": "\\intersect", "setminus": "\\setminus",
    "subseteq": "\\subseteq", "div": "\\div", "A": "\\A", "E": "\\E",
}
_SYMBOL_OPS = [
    "\\/", "/\\", "|->", "<<", ">>", "=>", "/=", "<=", ">=", "..", "->",
    "<", ">", "=", "#", "+", "-", "*", "%", "(", ")", "[", "]", "{", "}", ",", ":", "!",
    ".", "'", "~",
]
_OPENERS = {"(": ")", "[": "]", "{": "}", "<<": ">>"}
_CLOSERS = {")", "]", "}", ">>"}


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    span: SourceSpan

    def __str__(self) -> str:
        return f"{self.span}: {self.severity}[{self.code}]: {self.message}"


class SpecError(Exception):
    """Raised with one or more error diagnostics."""

    def __init__(self, diagnostics: list):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT INT STRING OP NL EOF
    value: str
    line: int
    col: int

    def span(self, origin: str) -> SourceSpan:
        return SourceSpan(origin, self.line, self.col, max(len(self.value), 1))


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT = re.compile(r"[0-9]+")


# a line ending in one of these, or a line starting with a connective,
# continues the previous statement
_TRAILING_CONT = {"=", "/\\", "\\/", "=>", ":", "|->", "->", ",", "+", "-", "*", "\\in",
                  "\\notin", "\\union", "\\intersect", "\\setminus", "\\subseteq", "<",
                  "<=", ">", ">=", "/=", "..", "~", "\\div", "%"}
_LEADING_CONT = ("/\\", "\\/", "=>")


def _continues(last: "Token", text: str, pos: int) -> bool:
    if last.kind == "OP" and last.value in _TRAILING_CONT:
        return True
    if last.kind == "IDENT" and last.value in ("then", "else", "if"):
        return True
    while pos < len(text):
        rest = text[pos:].lstrip(" \t\r")
        if rest.startswith("\n"):
            pos = len(text) - len(rest) + 1
            continue
        if rest.startswith("\\*"):
            return False
        return rest.startswith(_LEADING_CONT)
    return False


def tokenize(text: str, origin: str) -> list:
    toks: list[Token] = []
    depth = 0
    line = 1
    pos = 0
    line_start = 0
    n = len(text)
    while pos < n:
        c = text[pos]
        col = pos - line_start + 1
        if c == "\n":
            if depth == 0 and toks and toks[-1].kind != "NL" and not _continues(toks[-1], text, pos + 1):
                toks.append(Token("NL", "\n", line, col))
            line += 1
            pos += 1
            line_start = pos
            continue
        if c in " \t\r":
            pos += 1
            continue
        if text.startswith("\\*", pos):
            end = text.find("\n", pos)
            pos = n if end < 0 else end
            continue
        if c == '"':
            end = text.find('"', pos + 1)
            if end < 0 or "\n" in text[pos:end]:
                raise SpecError([Diagnostic("error", "E-syntax", "unterminated string",
                                            SourceSpan(origin, line, col, 1))])
            toks.append(Token("STRING", text[pos + 1:end], line, col))
            pos = end + 1
            continue
        m = _IDENT.match(text, pos)
        if m:
            toks.append(Token("IDENT", m.group(), line, col))
            pos = m.end()
            continue
        m = _INT.match(text, pos)
        if m:
            toks.append(Token("INT", m.group(), line, col))
            pos = m.end()
            continue
        if c == "\\" and not text.startswith("\\/", pos):
            m = _IDENT.match(text, pos + 1)
            if m and m.group() in _BACKSLASH_OPS:
                toks.append(Token("OP", _BACKSLASH_OPS[m.group()], line, col))
                pos = m.end()
                continue
            raise SpecError([Diagnostic("error", "E-syntax", "unknown backslash operator",
                                        SourceSpan(origin, line, col, 1))])
        for op in _SYMBOL_OPS:
            if text.startswith(op, pos):
                toks.append(Token("OP", op, line, col))
                pos += len(op)
                if op in _OPENERS:
                    depth += 1
                elif op in _CLOSERS:
                    depth = max(depth - 1, 0)
                break
        else:
            raise SpecError([Diagnostic("error", "E-syntax", f"unexpected character {c!r}",
                                        SourceSpan(origin, line, col, 1))])
    if toks and toks[-1].kind != "NL":
        toks.append(Token("NL", "\n", line, pos - line_start + 1))
    toks.append(Token("EOF", "", line, pos - line_start + 1))
    return toks


# --- expression grammar ----------------------------------------------------

BINARY_PREC = {
    "=>": 1, "\\/": 2, "/\\": 3,
    "=": 5, "/=": 5, "#": 5, "<": 5, "<=": 5, ">": 5, ">=": 5,
    "\\in": 5, "\\notin": 5, "\\subseteq": 5,
    "\\union": 6, "\\intersect": 6, "\\setminus": 6,
    "..": 7, "+": 8, "-": 8, "*": 9, "\\div": 9, "%": 9,
}
RIGHT_ASSOC = {"=>"}
NOT_PREC = 4
NEG_PREC = 10
DOMAIN_PREC = 6


class _Backtrack(Exception):
    pass


class Parser:
    def __init__(self, text: str, origin: str):
        self.origin = origin
        self.toks = tokenize(text, origin)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def span(self, t: Optional[Token] = None) -> SourceSpan:
        return (t or self.tok).span(self.origin)

    def error(self, msg: str, t: Optional[Token] = None, code: str = "E-syntax"):
        raise SpecError([Diagnostic("error", code, msg, self.span(t))])

    def at(self, value: str) -> bool:
        t = self.tok
        return t.kind in ("OP", "IDENT") and t.value == value

    def at_op(self, value: str) -> bool:
        return self.tok.kind == "OP" and self.tok.value == value

    def accept(self, value: str) -> Optional[Token]:
        if self.at(value):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, value: str) -> Token:
        t = self.accept(value)
        if t is None:
            shown = "end of line" if self.tok.kind == "NL" else repr(self.tok.value or "end of file")
            self.error(f"expected {value!r}, found {shown}")
        return t

    def expect_in(self) -> Token:
        if self.at_op("\\in") or self.at("in"):
            t = self.tok
            self.i += 1
            return t
        self.error("expected '\\in'")

    def at_in(self, k: int = 0) -> bool:
        t = self.peek(k) if k else self.tok
        return (t.kind == "OP" and t.value == "\\in") or (t.kind == "IDENT" and t.value == "in")

    def ident(self, what: str = "identifier") -> Token:
        t = self.tok
        if t.kind != "IDENT" or t.value in KEYWORDS:
            self.error(f"expected {what}")
        self.i += 1
        return t

    def end_line(self):
        if self.tok.kind == "EOF":
            return
        if self.tok.kind != "NL":
            self.error(f"unexpected {self.tok.value!r}; expected end of line")
        self.i += 1

    def skip_nl(self):
        while self.tok.kind == "NL":
            self.i += 1

    # expressions
    def expr(self, min_prec: int = 1):
        left = self.unary()
        while True:
            t = self.tok
            if t.kind != "OP" or t.value not in BINARY_PREC:
                return left
            prec = BINARY_PREC[t.value]
            if prec < min_prec:
                return left
            self.i += 1
            op = "/=" if t.value == "#" else t.value
            right = self.expr(prec if op in RIGHT_ASSOC else prec + 1)
            left = S.Binary(op, left, right, self.span(t))

    def unary(self):
        t = self.tok
        if self.at_op("~"):
            self.i += 1
            return S.Unary("~", self.expr(NOT_PREC), self.span(t))
        if self.at_op("-"):
            self.i += 1
            return S.Unary("-", self.expr(NEG_PREC), self.span(t))
        return self.postfix()

    def postfix(self):
        e = self.atom()
        while True:
            t = self.tok
            if self.at_op("["):
                self.i += 1
                k = self.expr()
                self.expect("]")
                e = S.Index(e, k, self.span(t))
            elif self.at_op(".") and self.peek().kind == "IDENT":
                self.i += 1
                name = self.ident("field name")
                e = S.Field(e, name.value, self.span(t))
            else:
                return e

    def atom(self):
        t = self.tok
        sp = self.span(t)
        if t.kind == "INT":
            self.i += 1
            return S.Lit(int(t.value), sp)
        if t.kind == "IDENT":
            if t.value == "TRUE" or t.value == "FALSE":
                self.i += 1
                return S.Lit(t.value == "TRUE", sp)
            if t.value == "if":
                self.i += 1
                c = self.expr()
                self.expect("then")
                a = self.expr()
                self.expect("else")
                b = self.expr()
                return S.If(c, a, b, sp)
            if t.value in ("forall", "exists"):
                self.i += 1
                return self.quantifier("A" if t.value == "forall" else "E", sp)
            if t.value in KEYWORDS:
                self.error(f"unexpected keyword {t.value!r}")
            self.i += 1
            if self.at_op("("):
                self.i += 1
                args = []
                if not self.at_op(")"):
                    args.append(self.expr())
                    while self.accept(","):
                        args.append(self.expr())
                self.expect(")")
                if t.value in S.BUILTINS:
                    if len(args) != S.BUILTINS[t.value]:
                        self.error(f"{t.value} takes {S.BUILTINS[t.value]} argument(s)", t)
                    return S.Builtin(t.value, tuple(args), sp)
                return S.Call(t.value, tuple(args), sp)
            return S.Name(t.value, sp)
        if t.kind == "OP":
            if t.value in ("\\A", "\\E"):
                self.i += 1
                return self.quantifier(t.value[1], sp)
            if t.value == "(":
                self.i += 1
                e = self.expr()
                self.expect(")")
                return e
            if t.value == "{":
                return self.set_expr()
            if t.value == "<<":
                self.i += 1
                elems = []
                if not self.at_op(">>"):
                    elems.append(self.expr())
                    while self.accept(","):
                        elems.append(self.expr())
                self.expect(">>")
                return S.SeqLit(tuple(elems), sp)
            if t.value == "[":
                return self.bracket_expr()
        if t.kind == "NL" or t.kind == "EOF":
            self.error("expression expected before end of line")
        self.error(f"unexpected {t.value!r}")

    def quantifier(self, kind: str, sp):
        binds = []
        while True:
            v = self.ident("bound variable")
            self.expect_in()
            binds.append((v.value, self.expr(DOMAIN_PREC), self.span(v)))
            if not self.accept(","):
                break
        self.expect(":")
        body = self.expr()
        for name, dom, vsp in reversed(binds):
            body = S.Quant(kind, name, dom, body, sp)
        return body

    def set_expr(self):
        sp = self.span()
        self.expect("{")
        if self.accept("}"):
            return S.SetLit((), sp)
        if self.tok.kind == "IDENT" and self.tok.value not in KEYWORDS and self.at_in(1):
            save = self.i
            try:
                var = self.ident()
                self.expect_in()
                dom = self.expr(DOMAIN_PREC)
                if not self.at_op(":"):
                    raise _Backtrack
                self.i += 1
                pred = self.expr()
                self.expect("}")
                return S.SetFilter(var.value, dom, pred, sp)
            except _Backtrack:
                self.i = save
        first = self.expr()
        if self.accept(":"):
            var = self.ident("bound variable")
            self.expect_in()
            dom = self.expr(DOMAIN_PREC)
            self.expect("}")
            return S.SetMap(first, var.value, dom, sp)
        elems = [first]
        while self.accept(","):
            elems.append(self.expr())
        self.expect("}")
        return S.SetLit(tuple(elems), sp)

    def bracket_expr(self):
        sp = self.span()
        self.expect("[")
        if self.tok.kind == "IDENT" and self.peek().kind == "OP" and self.peek().value == "|->":
            fields = []
            while True:
                name = self.ident("field name")
                self.expect("|->")
                fields.append((name.value, self.expr()))
                if not self.accept(","):
                    break
            self.expect("]")
            return S.RecordLit(tuple(fields), sp)
        if self.tok.kind == "IDENT" and self.tok.value not in KEYWORDS and self.at_in(1):
            save = self.i
            try:
                var = self.ident()
                self.expect_in()
                dom = self.expr(DOMAIN_PREC)
                if not self.at_op("|->"):
                    raise _Backtrack
                self.i += 1
                body = self.expr()
                self.expect("]")
                return S.MapComp(var.value, dom, body, sp)
            except _Backtrack:
                self.i = save
        base = self.expr()
        self.expect("EXCEPT")
        updates = []
        while True:
            self.expect("!")
            path = self.path()
            self.expect("=")
            updates.append((path, self.expr()))
            if not self.accept(","):
                break
        self.expect("]")
        return S.Except(base, tuple(updates), sp)

    def path(self) -> tuple:
        path = []
        while True:
            if self.accept("["):
                path.append(("idx", self.expr()))
                self.expect("]")
            elif self.at_op(".") and self.peek().kind == "IDENT":
                self.i += 1
                path.append(("fld", self.ident("field name").value))
            else:
                break
        if not path:
            self.error("expected '[' or '.' in update path")
        return tuple(path)

    # types
    def type_expr(self):
        t = self.tok
        sp = self.span(t)
        if self.accept("Bool"):
            return S.BoolT(sp)
        if t.kind == "IDENT" and t.value in ("Set", "Seq") and self.peek().value == "(":
            self.i += 2
            elem = self.type_expr()
            if t.value == "Set":
                self.expect(")")
                return S.SetT(elem, sp)
            self.expect(",")
            n = self.expr()
            self.expect(")")
            return S.SeqT(elem, n, sp)
        if self.at_op("["):
            if self.peek().kind == "IDENT" and self.peek(2).value == ":":
                self.i += 1
                fields = []
                while True:
                    name = self.ident("field name")
                    self.expect(":")
                    fields.append((name.value, self.type_expr()))
                    if not self.accept(","):
                        break
                self.expect("]")
                return S.RecordT(tuple(fields), sp)
            self.i += 1
            key = self.type_expr()
            self.expect("->")
            val = self.type_expr()
            self.expect("]")
            return S.MapT(key, val, sp)
        lo = self.expr(BINARY_PREC[".."] + 1)
        if self.accept(".."):
            hi = self.expr(BINARY_PREC[".."] + 1)
            return S.RangeT(lo, hi, sp)
        if isinstance(lo, S.Name):
            return S.SortT(lo.name, sp)
        self.error("expected a type", t)

    # declarations
    def parse_spec(self) -> S.Spec:
        self.skip_nl()
        self.expect("spec")
        name = self.ident("spec name").value
        self.end_line()
        consts, sorts, defs, variables, init, modules, invariants = [], [], [], [], [], [], []
        while True:
            self.skip_nl()
            t = self.tok
            if t.kind == "EOF":
                break
            sp = self.span(t)
            if self.accept("const"):
                n = self.ident("constant name")
                self.expect("=")
                consts.append(S.Decl(n.value, self.expr(), self.span(n)))
                self.end_line()
            elif self.accept("sort"):
                n = self.ident("sort name")
                self.expect("=")
                self.expect("{")
                members = [self.ident("symbol")]
                while self.accept(","):
                    members.append(self.ident("symbol"))
                self.expect("}")
                sorts.append(S.Decl(n.value, tuple(m.value for m in members), self.span(n)))
                self.end_line()
            elif self.accept("def"):
                n = self.ident("definition name")
                params = []
                if self.accept("("):
                    params.append(self.ident("parameter").value)
                    while self.accept(","):
                        params.append(self.ident("parameter").value)
                    self.expect(")")
                self.expect("=")
                defs.append(S.Def(n.value, tuple(params), self.expr(), self.span(n)))
                self.end_line()
            elif self.accept("vars"):
                self.end_line()
                while True:
                    self.skip_nl()
                    if self.tok.kind != "IDENT" or self.tok.value in KEYWORDS:
                        break
                    n = self.ident("variable name")
                    self.expect(":")
                    variables.append(S.Decl(n.value, self.type_expr(), self.span(n)))
                    self.end_line()
            elif self.accept("init"):
                self.end_line()
                while True:
                    self.skip_nl()
                    if self.tok.kind != "IDENT" or self.tok.value in KEYWORDS:
                        break
                    n = self.ident("variable name")
                    self.expect("=")
                    init.append(S.Decl(n.value, self.expr(), self.span(n)))
                    self.end_line()
            elif self.accept("module"):
                n = self.ident("module name")
                self.end_line()
                actions = []
                while True:
                    self.skip_nl()
                    if not self.at("action"):
                        break
                    actions.append(self.action(n.value))
                modules.append(S.Module(n.value, tuple(actions), self.span(n)))
            elif self.accept("invariant"):
                n = self.ident("invariant name")
                self.expect("=")
                invariants.append(S.Decl(n.value, self.expr(), self.span(n)))
                self.end_line()
            elif self.at("action"):
                self.error("action outside of a module block", code="E-structure")
            else:
                self.error(f"unexpected {t.value!r} at top level")
            del sp
        return S.Spec(name, tuple(consts), tuple(sorts), tuple(defs), tuple(variables),
                      tuple(init), tuple(modules), tuple(invariants), origin=self.origin)

    def action(self, module: str) -> S.Action:
        self.expect("action")
        n = self.ident("action name")
        params = []
        if self.accept("("):
            while True:
                p = self.ident("parameter name")
                self.expect_in()
                params.append(S.Param(p.value, self.expr(DOMAIN_PREC), self.span(p)))
                if not self.accept(","):
                    break
            self.expect(")")
        self.end_line()
        guards, updates = [], []
        unchanged: set = set()
        while True:
            self.skip_nl()
            if self.accept("when"):
                guards.append(self.expr())
                self.end_line()
            elif self.accept("then"):
                if self.accept("UNCHANGED"):
                    wrapped = self.accept("<<") is not None
                    unchanged.add(self.ident("variable name").value)
                    while self.accept(","):
                        unchanged.add(self.ident("variable name").value)
                    if wrapped:
                        self.expect(">>")
                else:
                    self.update(updates)
                self.end_line()
            else:
                break
        return S.Action(n.value, module, tuple(params), tuple(guards), tuple(updates), self.span(n))

    def update(self, updates: list):
        v = self.ident("variable name")
        self.expect("'")
        sp = self.span(v)
        if self.at_op("[") or (self.at_op(".") and self.peek().kind == "IDENT"):
            path = self.path()
            self.expect("=")
            value = self.expr()
            for k, u in enumerate(updates):
                if u.var == v.value and isinstance(u.expr, S.Except) and \
                        isinstance(u.expr.base, S.Name) and u.expr.base.name == v.value:
                    merged = replace(u.expr, updates=u.expr.updates + ((path, value),))
                    updates[k] = replace(u, expr=merged)
                    return
            updates.append(S.Update(v.value, S.Except(S.Name(v.value, sp), ((path, value),), sp), sp))
            return
        self.expect("=")
        updates.append(S.Update(v.value, self.expr(), sp))


# --- resolution ------------------------------------------------------------


class Resolver:
    """Binds names and enforces declaration-level invariants of a spec."""

    def __init__(self, spec: S.Spec):
        self.spec = spec
        self.origin = spec.origin
        self.diags: list[Diagnostic] = []
        self.kinds: dict[str, str] = {}
        self.defs = {d.name: d for d in spec.defs}
        self.sorts = {d.name: d.value for d in spec.sorts}

    def err(self, code: str, msg: str, span):
        self.diags.append(Diagnostic("error", code, msg, span or SourceSpan(self.origin, 1, 1)))

    def declare(self, name: str, kind: str, span):
        if name in self.kinds:
            self.err("E-duplicate", f"duplicate {kind} name {name} (already a {self.kinds[name]})", span)
        else:
            self.kinds[name] = kind

    def resolve(self) -> S.Spec:
        sp = self.spec
        for d in sp.consts:
            self.declare(d.name, "constant", d.span)
        for d in sp.sorts:
            self.declare(d.name, "sort", d.span)
            for sym in d.value:
                self.declare(sym, "symbol", d.span)
        for d in sp.defs:
            self.declare(d.name, "definition", d.span)
        for d in sp.variables:
            self.declare(d.name, "variable", d.span)
        self._check_def_cycles()

        consts = tuple(replace(d, value=self.expr(d.value, set(), constant=True)) for d in sp.consts)
        defs = tuple(replace(d, body=self.expr(d.body, set(d.params))) for d in sp.defs)
        variables = tuple(replace(d, value=self.type_(d.value)) for d in sp.variables)

        init_seen: dict = {}
        init = []
        for d in sp.init:
            if d.name not in self.kinds or self.kinds[d.name] != "variable":
                self.err("E-unresolved", f"init assigns undeclared variable {d.name}", d.span)
                continue
            if d.name in init_seen:
                self.err("E-duplicate", f"variable {d.name} initialized twice", d.span)
                continue
            init_seen[d.name] = True
            init.append(replace(d, value=self.expr(d.value, set(), constant=True, what="init")))
        order = {d.name: i for i, d in enumerate(sp.variables)}
        init.sort(key=lambda d: order[d.name])
        for d in sp.variables:
            if d.name not in init_seen:
                self.err("E-init", f"variable {d.name} has no initial value", d.span)

        modules = []
        mod_names: set = set()
        owner: dict = {}
        for m in sp.modules:
            if m.name in mod_names:
                self.err("E-duplicate", f"duplicate module {m.name}", m.span)
            mod_names.add(m.name)
            actions = []
            for a in m.actions:
                if a.name in owner:
                    self.err("E-duplicate",
                             f"action {a.name} is declared in module {owner[a.name]} and in {m.name}",
                             a.span)
                owner[a.name] = m.name
                actions.append(self.action(a))
            modules.append(replace(m, actions=tuple(actions)))
        invariants = []
        inv_names: set = set()
        for d in sp.invariants:
            if d.name in inv_names:
                self.err("E-duplicate", f"duplicate invariant {d.name}", d.span)
            inv_names.add(d.name)
            invariants.append(replace(d, value=self.expr(d.value, set())))
        if self.diags:
            raise SpecError(self.diags)
        return replace(sp, consts=consts, defs=defs, variables=variables, init=tuple(init),
                       modules=tuple(modules), invariants=tuple(invariants))

    def _check_def_cycles(self):
        state: dict = {}

        def visit(name, span):
            if state.get(name) == 1:
                self.err("E-recursion", f"definition {name} is recursive", span)
                return
            if state.get(name) == 2:
                return
            state[name] = 1
            for n in S.walk(self.defs[name].body):
                if isinstance(n, (S.Call, S.Name)) and n.name in self.defs:
                    visit(n.name, n.span)
            state[name] = 2

        for d in self.spec.defs:
            visit(d.name, d.span)

    def action(self, a: S.Action) -> S.Action:
        bound: set = set()
        params = []
        for p in a.params:
            if p.name in bound:
                self.err("E-duplicate", f"duplicate parameter {p.name}", p.span)
            if p.name in self.kinds:
                self.err("E-shadow", f"parameter {p.name} shadows a {self.kinds[p.name]}", p.span)
            params.append(replace(p, domain=self.expr(p.domain, set(bound))))
            bound.add(p.name)
        guards = tuple(self.expr(g, bound) for g in a.guards)
        seen: set = set()
        updates = []
        for u in a.updates:
            if self.kinds.get(u.var) != "variable":
                self.err("E-unresolved", f"unresolved variable {u.var}", u.span)
                continue
            if u.var in seen:
                self.err("E-duplicate", f"variable {u.var} is updated twice in action {a.name}", u.span)
            seen.add(u.var)
            updates.append(replace(u, expr=self.expr(u.expr, bound)))
        return replace(a, params=tuple(params), guards=guards, updates=tuple(updates))

    def type_(self, t):
        if isinstance(t, S.SortT):
            if self.kinds.get(t.name) != "sort":
                self.err("E-unresolved", f"unresolved sort {t.name}", t.span)
            return t
        if isinstance(t, S.RangeT):
            return replace(t, lo=self.expr(t.lo, set(), constant=True),
                           hi=self.expr(t.hi, set(), constant=True))
        if isinstance(t, S.SetT):
            return replace(t, elem=self.type_(t.elem))
        if isinstance(t, S.SeqT):
            return replace(t, elem=self.type_(t.elem), maxlen=self.expr(t.maxlen, set(), constant=True))
        if isinstance(t, S.RecordT):
            return replace(t, fields=tuple((n, self.type_(ft)) for n, ft in t.fields))
        if isinstance(t, S.MapT):
            key = self.type_(t.key)
            if not isinstance(key, (S.SortT, S.RangeT, S.BoolT)):
                self.err("E-type", "map keys must be a sort, an integer range or Bool", t.span)
            return replace(t, key=key, value=self.type_(t.value))
        return t

    def expr(self, e, bound: set, constant: bool = False, what: str = "constant"):
        def go(n, bound):
            if isinstance(n, S.Name):
                if n.name in bound:
                    return S.ParamRef(n.name, n.span)
                kind = self.kinds.get(n.name)
                if kind == "variable":
                    if constant:
                        self.err("E-init-state" if what == "init" else "E-constant",
                                 f"{what} expression references state variable {n.name}", n.span)
                    return S.VarRef(n.name, n.span)
                if kind == "constant":
                    return S.ConstRef(n.name, n.span)
                if kind == "sort":
                    return S.SortRef(n.name, n.span)
                if kind == "symbol":
                    return S.SymRef(n.name, n.span)
                if kind == "definition":
                    return self._call(S.Call(n.name, (), n.span), bound, go, constant, what)
                self.err("E-unresolved", f"unresolved variable {n.name}", n.span)
                return n
            if isinstance(n, S.Call):
                return self._call(n, bound, go, constant, what)
            if isinstance(n, (S.Quant, S.SetFilter, S.MapComp)):
                dom = go(n.domain, bound)
                inner = bound | {n.var}
                if isinstance(n, S.Quant):
                    return replace(n, domain=dom, body=go(n.body, inner))
                if isinstance(n, S.SetFilter):
                    return replace(n, domain=dom, pred=go(n.pred, inner))
                return replace(n, domain=dom, body=go(n.body, inner))
            if isinstance(n, S.SetMap):
                return replace(n, domain=go(n.domain, bound), expr=go(n.expr, bound | {n.var}))
            if isinstance(n, S.Except):
                ups = tuple((tuple((k, go(x, bound) if k == "idx" else x) for k, x in path),
                             go(v, bound)) for path, v in n.updates)
                return replace(n, base=go(n.base, bound), updates=ups)
            if isinstance(n, (S.Unary, S.Binary, S.If, S.SetLit, S.SeqLit, S.RecordLit,
                              S.Index, S.Field, S.Builtin)):
                return _map_children(n, lambda c: go(c, bound))
            return n

        return go(e, bound)

    def _call(self, n: S.Call, bound, go, constant, what):
        d = self.defs.get(n.name)
        if d is None:
            self.err("E-unresolved", f"unresolved operator {n.name}", n.span)
            return n
        if len(d.params) != len(n.args):
            self.err("E-arity", f"{n.name} expects {len(d.params)} argument(s), got {len(n.args)}",
                     n.span)
            return n
        if constant and S.state_reads(d.body, self.defs) | _name_reads(d.body, self.kinds):
            self.err("E-init-state" if what == "init" else "E-constant",
                     f"{what} expression calls {n.name}, which reads state variables", n.span)
        return replace(n, args=tuple(go(a, bound) for a in n.args))


def _name_reads(e, kinds) -> set:
    return {n.name for n in S.walk(e) if isinstance(n, S.Name) and kinds.get(n.name) == "variable"}


def _map_children(n, fn):
    changes = {}
    for f in n.__dataclass_fields__:
        if f == "span":
            continue
        v = getattr(n, f)
        if isinstance(v, tuple):
            nv = tuple(
                (x[0], fn(x[1])) if isinstance(x, tuple) else fn(x) for x in v
            )
        elif hasattr(v, "__dataclass_fields__"):
            nv = fn(v)
        else:
            continue
        changes[f] = nv
    return replace(n, **changes)


def parse_spec(text: str, origin: str = "<string>") -> S.Spec:
    """Parse and validate a specification; raises :class:`SpecError`."""
    raw = Parser(text, origin).parse_spec()
    spec = Resolver(raw).resolve()
    from .kernel import EvalError, ValidationError, model_of

    try:
        model_of(spec).initial()
    except (EvalError, ValidationError) as exc:
        span = getattr(exc, "span", None) or SourceSpan(origin, 1, 1)
        raise SpecError([Diagnostic("error", "E-init", str(exc), span)]) from None
    return spec


def load_spec(path: str) -> S.Spec:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SpecError([Diagnostic("error", "E-io", f"no such file: {exc.strerror}",
                                    SourceSpan(path, 1, 1))]) from None
    return parse_spec(text, path)


# --- manifests -------------------------------------------------------------


@dataclass(frozen=True)
class MapEntry:
    """Target of one concrete action; ``target is None`` means VOID."""

    action: str
    target: Optional[str]
    target_module: Optional[str] = None
    bindings: Optional[tuple] = None  # explicit parameter expressions, or None = positional
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass
class IpaManifest:
    origin: str
    root_path: Optional[str]
    abstraction_paths: dict
    action_map: dict  # concrete action -> MapEntry
    refine: dict  # abstract-only var -> Expr (over root variables)
    invariants: tuple  # Decl over abstract variables
    root: Optional[S.Spec] = None
    abstractions: dict = field(default_factory=dict)  # module -> Spec
    module_spans: dict = field(default_factory=dict)


class _ManifestParser(Parser):
    def parse(self):
        root_path = None
        abstractions: dict = {}
        spans: dict = {}
        entries: list = []
        refine: list = []
        invariants: list = []
        while True:
            self.skip_nl()
            t = self.tok
            if t.kind == "EOF":
                break
            if self.accept("spec"):
                s = self.tok
                if s.kind != "STRING":
                    self.error("expected a quoted path")
                self.i += 1
                root_path = s.value
                self.end_line()
            elif self.accept("abstract"):
                m = self.ident("module name")
                self.expect("=")
                s = self.tok
                if s.kind != "STRING":
                    self.error("expected a quoted path")
                self.i += 1
                if m.value in abstractions:
                    self.error(f"module {m.value} has two abstractions", m, "E-duplicate")
                abstractions[m.value] = s.value
                spans[m.value] = self.span(m)
                self.end_line()
            elif self.accept("map"):
                mod = self.ident("module name")
                self.expect(".")
                act = self.ident("action name")
                self.expect("->")
                sp = self.span(mod)
                if self.accept("void"):
                    entries.append(MapEntry(act.value, None, None, None, sp))
                else:
                    tm = self.ident("abstract module name")
                    self.expect(".")
                    ta = self.ident("abstract action name")
                    bindings = None
                    if self.accept("("):
                        args = []
                        if not self.at_op(")"):
                            args.append(self.expr())
                            while self.accept(","):
                                args.append(self.expr())
                        self.expect(")")
                        bindings = tuple(args)
                    entries.append(MapEntry(act.value, ta.value, tm.value, bindings, sp))
                entries[-1] = replace(entries[-1], span=sp)
                entries_mod = mod.value
                entries[-1] = (entries_mod, entries[-1])  # type: ignore[assignment]
                self.end_line()
            elif self.accept("refine"):
                v = self.ident("variable name")
                self.expect("=")
                refine.append(S.Decl(v.value, self.expr(), self.span(v)))
                self.end_line()
            elif self.accept("invariant"):
                v = self.ident("invariant name")
                self.expect("=")
                invariants.append(S.Decl(v.value, self.expr(), self.span(v)))
                self.end_line()
            else:
                self.error(f"unexpected {t.value!r} in manifest")
        return root_path, abstractions, spans, entries, refine, invariants


def parse_manifest(text: str, origin: str = "<string>", root: Optional[S.Spec] = None,
                   abstractions: Optional[dict] = None) -> IpaManifest:
    """Parse a manifest and validate it against the root and abstraction specs.

    Specs not supplied are loaded from the paths in the manifest, relative to
    the manifest's directory.
    """
    p = _ManifestParser(text, origin)
    root_path, abs_paths, spans, raw_entries, refine, invariants = p.parse()
    base = os.path.dirname(origin)
    diags: list[Diagnostic] = []
    here = SourceSpan(origin, 1, 1)
    if root is None:
        if root_path is None:
            raise SpecError([Diagnostic("error", "E-manifest", "manifest names no root spec", here)])
        root = load_spec(os.path.join(base, root_path))
    abstractions = dict(abstractions or {})
    for m, rel in abs_paths.items():
        if m not in abstractions:
            abstractions[m] = load_spec(os.path.join(base, rel))

    modules = [m.name for m in root.modules]
    for m in modules:
        if m not in abstractions:
            diags.append(Diagnostic("error", "E-missing-abstraction",
                                    f"module {m} has no abstraction", here))
    for m, spec in abstractions.items():
        sp = spans.get(m, here)
        if m not in modules:
            diags.append(Diagnostic("error", "E-unknown-module",
                                    f"abstraction given for unknown module {m}", sp))
        if len(spec.modules) != 1:
            diags.append(Diagnostic("error", "E-abstraction",
                                    f"abstraction of {m} must declare exactly one module", sp))

    actions = {a.name: a for a in root.actions}
    action_map: dict = {}
    for mod, entry in raw_entries:
        a = actions.get(entry.action)
        if a is None or a.module != mod:
            diags.append(Diagnostic("error", "E-unknown-action",
                                    f"{mod}.{entry.action} is not an action of the root spec", entry.span))
            continue
        if entry.action in action_map:
            diags.append(Diagnostic("error", "E-duplicate",
                                    f"{mod}.{entry.action} is mapped twice", entry.span))
            continue
        if entry.target is not None:
            abs_spec = abstractions.get(mod)
            if abs_spec is None:
                continue
            abs_mod = abs_spec.modules[0] if abs_spec.modules else None
            if abs_mod is None or entry.target_module != abs_mod.name or \
                    entry.target not in {x.name for x in abs_mod.actions}:
                diags.append(Diagnostic("error", "E-unknown-action",
                                        f"{entry.target_module}.{entry.target} is not an action of "
                                        f"the abstraction of {mod}", entry.span))
                continue
            target = abs_spec.action(entry.target)
            if entry.bindings is None:
                if len(target.params) != len(a.params):
                    diags.append(Diagnostic(
                        "error", "E-arity",
                        f"{mod}.{entry.action} has {len(a.params)} parameter(s) but "
                        f"{entry.target} has {len(target.params)}; give explicit bindings",
                        entry.span))
                    continue
            else:
                if len(entry.bindings) != len(target.params):
                    diags.append(Diagnostic(
                        "error", "E-arity",
                        f"{entry.target} takes {len(target.params)} parameter(s), "
                        f"{len(entry.bindings)} binding(s) given", entry.span))
                    continue
                res = Resolver(root)
                res.resolve_kinds_only()
                bound = {prm.name for prm in a.params}
                bindings = tuple(res.expr(b, bound) for b in entry.bindings)
                diags.extend(res.diags)
                entry = replace(entry, bindings=bindings)
        action_map[entry.action] = entry
    for a in root.actions:
        if a.name not in action_map and not any(d.code == "E-unknown-action" for d in diags
                                                if entry_action(d) == a.name):
            diags.append(Diagnostic("error", "E-unmapped",
                                    f"action {a.module}.{a.name} has no action_map entry", here))

    root_vars = set(root.var_names)
    abs_vars: dict = {}
    for spec in abstractions.values():
        for d in spec.variables:
            abs_vars.setdefault(d.name, d)
    refine_map: dict = {}
    res = Resolver(root)
    res.resolve_kinds_only()
    for d in refine:
        if d.name not in abs_vars and d.name not in root_vars:
            diags.append(Diagnostic("error", "E-refine",
                                    f"refine entry for variable {d.name}, which does not exist", d.span))
            continue
        if d.name in root_vars:
            diags.append(Diagnostic("error", "E-refine",
                                    f"refine entry for concrete variable {d.name} "
                                    f"(same-named variables map by identity)", d.span))
            continue
        refine_map[d.name] = res.expr(d.value, set())
    diags.extend(res.diags)
    for name, d in abs_vars.items():
        if name not in root_vars and name not in refine_map:
            diags.append(Diagnostic("error", "E-refine",
                                    f"abstract-only variable {name} has no refine entry", d.span))

    resolved_invs: list = []
    if not diags:
        from .composer import merged_scope_spec

        try:
            scope = merged_scope_spec(root, abstractions)
        except SpecError as exc:
            diags.extend(exc.diagnostics)
        else:
            res = Resolver(scope)
            res.resolve_kinds_only()
            names: set = set()
            for d in invariants:
                if d.name in names:
                    diags.append(Diagnostic("error", "E-duplicate", f"duplicate invariant {d.name}",
                                            d.span))
                names.add(d.name)
                resolved_invs.append(replace(d, value=res.expr(d.value, set())))
            diags.extend(res.diags)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise SpecError(errors)
    return IpaManifest(origin, root_path, dict(abs_paths), action_map, refine_map,
                       tuple(resolved_invs), root, abstractions, spans)


def entry_action(d: Diagnostic) -> str:
    m = re.match(r"\w+\.(\w+) is not an action of the root spec", d.message)
    return m.group(1) if m else ""


def _resolve_kinds_only(self: Resolver):
    sp = self.spec
    for d in sp.consts:
        self.kinds.setdefault(d.name, "constant")
    for d in sp.sorts:
        self.kinds.setdefault(d.name, "sort")
        for sym in d.value:
            self.kinds.setdefault(sym, "symbol")
    for d in sp.defs:
        self.kinds.setdefault(d.name, "definition")
    for d in sp.variables:
        self.kinds.setdefault(d.name, "variable")


Resolver.resolve_kinds_only = _resolve_kinds_only  # type: ignore[attr-defined]


def load_manifest(path: str, root: Optional[S.Spec] = None) -> IpaManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SpecError([Diagnostic("error", "E-io", f"no such file: {exc.strerror}",
                                    SourceSpan(path, 1, 1))]) from None
    return parse_manifest(text, path, root)


# --- rendering -------------------------------------------------------------

_ATOM_PREC = 12


def _prec(e) -> int:
    if isinstance(e, S.Binary):
        return BINARY_PREC[e.op]
    if isinstance(e, S.Unary):
        return NOT_PREC if e.op == "~" else NEG_PREC
    if isinstance(e, (S.If, S.Quant)):
        return 0
    if isinstance(e, (S.Index, S.Field)):
        return 11
    return _ATOM_PREC


def render_expr(e, ctx: int = 0) -> str:
    """Render with the minimal parentheses needed for ``ctx`` precedence."""
    s = _render(e)
    return f"({s})" if _prec(e) < ctx else s


def _render(e) -> str:
    if isinstance(e, S.Lit):
        if e.value is True:
            return "TRUE"
        if e.value is False:
            return "FALSE"
        return str(e.value)
    if isinstance(e, (S.Name, S.VarRef, S.ParamRef, S.ConstRef, S.SortRef, S.SymRef)):
        return e.name
    if isinstance(e, S.Unary):
        p = _prec(e)
        return f"{e.op}{render_expr(e.arg, p)}" if e.op == "~" else f"-{render_expr(e.arg, p + 1)}"
    if isinstance(e, S.Binary):
        p = BINARY_PREC[e.op]
        if e.op in RIGHT_ASSOC:
            return f"{render_expr(e.left, p + 1)} {e.op} {render_expr(e.right, p)}"
        return f"{render_expr(e.left, p)} {e.op} {render_expr(e.right, p + 1)}"
    if isinstance(e, S.If):
        return f"if {render_expr(e.cond)} then {render_expr(e.then)} else {render_expr(e.orelse)}"
    if isinstance(e, S.Quant):
        return f"\\{e.kind} {e.var} \\in {render_expr(e.domain, DOMAIN_PREC)} : {render_expr(e.body)}"
    if isinstance(e, S.SetLit):
        return "{" + ", ".join(_set_elem(x) for x in e.elems) + "}"
    if isinstance(e, S.SetFilter):
        return "{" + f"{e.var} \\in {render_expr(e.domain, DOMAIN_PREC)} : {render_expr(e.pred)}" + "}"
    if isinstance(e, S.SetMap):
        head = render_expr(e.expr)
        if isinstance(e.expr, S.Binary) and e.expr.op == "\\in":
            head = f"({head})"
        return "{" + f"{head} : {e.var} \\in {render_expr(e.domain, DOMAIN_PREC)}" + "}"
    if isinstance(e, S.SeqLit):
        return "<<" + ", ".join(render_expr(x) for x in e.elems) + ">>"
    if isinstance(e, S.RecordLit):
        return "[" + ", ".join(f"{n} |-> {render_expr(x)}" for n, x in e.fields) + "]"
    if isinstance(e, S.MapComp):
        return f"[{e.var} \\in {render_expr(e.domain, DOMAIN_PREC)} |-> {render_expr(e.body)}]"
    if isinstance(e, S.Except):
        parts = []
        for path, v in e.updates:
            parts.append("!" + _render_path(path) + " = " + render_expr(v))
        base = render_expr(e.base)
        if _bracket_ambiguous(e.base):
            base = f"({base})"
        return f"[{base} EXCEPT {', '.join(parts)}]"
    if isinstance(e, S.Index):
        return f"{render_expr(e.base, 11)}[{render_expr(e.key)}]"
    if isinstance(e, S.Field):
        return f"{render_expr(e.base, 11)}.{e.name}"
    if isinstance(e, (S.Builtin, S.Call)):
        if not e.args and isinstance(e, S.Call):
            return e.name
        return f"{e.name}(" + ", ".join(render_expr(x) for x in e.args) + ")"
    raise TypeError(f"cannot render {e!r}")


def _set_elem(x) -> str:
    s = render_expr(x)
    return s


def _bracket_ambiguous(e) -> bool:
    # ``[x \in S ...`` or ``[f |-> ...`` openings would be read as comprehension/record
    return isinstance(e, S.Binary) and e.op in ("\\in",)


def _render_path(path) -> str:
    out = []
    for kind, x in path:
        out.append(f"[{render_expr(x)}]" if kind == "idx" else f".{x}")
    return "".join(out)


def render_type(t) -> str:
    if isinstance(t, S.BoolT):
        return "Bool"
    if isinstance(t, S.RangeT):
        return f"{render_expr(t.lo, 8)}..{render_expr(t.hi, 8)}"
    if isinstance(t, S.SortT):
        return t.name
    if isinstance(t, S.SetT):
        return f"Set({render_type(t.elem)})"
    if isinstance(t, S.SeqT):
        return f"Seq({render_type(t.elem)}, {render_expr(t.maxlen)})"
    if isinstance(t, S.RecordT):
        return "[" + ", ".join(f"{n}: {render_type(ft)}" for n, ft in t.fields) + "]"
    if isinstance(t, S.MapT):
        return f"[{render_type(t.key)} -> {render_type(t.value)}]"
    raise TypeError(f"cannot render type {t!r}")


def render_spec(spec: S.Spec) -> str:
    """Canonical text; ``parse_spec(render_spec(s)) == s`` for validated specs."""
    out = [f"spec {spec.name}", ""]
    for d in spec.consts:
        out.append(f"const {d.name} = {render_expr(d.value)}")
    for d in spec.sorts:
        out.append(f"sort {d.name} = {{{', '.join(d.value)}}}")
    for d in spec.defs:
        params = f"({', '.join(d.params)})" if d.params else ""
        out.append(f"def {d.name}{params} = {render_expr(d.body)}")
    if spec.variables:
        out += ["", "vars"]
        out += [f"  {d.name} : {render_type(d.value)}" for d in spec.variables]
    if spec.init:
        out += ["", "init"]
        out += [f"  {d.name} = {render_expr(d.value)}" for d in spec.init]
    for m in spec.modules:
        out += ["", f"module {m.name}"]
        for a in m.actions:
            params = ""
            if a.params:
                params = "(" + ", ".join(
                    f"{p.name} \\in {render_expr(p.domain, DOMAIN_PREC)}" for p in a.params) + ")"
            out.append(f"  action {a.name}{params}")
            out += [f"    when {render_expr(g)}" for g in a.guards]
            out += [f"    then {u.var}' = {render_expr(u.expr)}" for u in a.updates]
    if spec.invariants:
        out.append("")
        out += [f"invariant {d.name} = {render_expr(d.value)}" for d in spec.invariants]
    return "\n".join(out) + "\n"


def render_manifest(man: IpaManifest) -> str:
    """Canonical manifest text; parsing it back gives an equal manifest."""
    out = []
    if man.root_path is not None:
        out += [f'spec "{man.root_path}"', ""]
    out += [f'abstract {m} = "{p}"' for m, p in man.abstraction_paths.items()]
    if man.action_map:
        out.append("")
    for name, e in man.action_map.items():
        mod = man.root.module_of(name) if man.root is not None else "?"
        if e.target is None:
            out.append(f"map {mod}.{name} -> void")
            continue
        args = ""
        if e.bindings is not None:
            args = "(" + ", ".join(render_expr(b) for b in e.bindings) + ")"
        out.append(f"map {mod}.{name} -> {e.target_module}.{e.target}{args}")
    if man.refine:
        out.append("")
        out += [f"refine {v} = {render_expr(x)}" for v, x in man.refine.items()]
    if man.invariants:
        out.append("")
        out += [f"invariant {d.name} = {render_expr(d.value)}" for d in man.invariants]
    return "\n".join(out) + "\n"
