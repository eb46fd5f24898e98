"""Parser for the section-based protocol specification format.

Sections (any order, each optional)::

    THEORY      sorts / subsort / op / var / rule statements
    PROCESSES   role Name = process
    DOMAINS     Sort = value value ...
    ATTACKS     attack N ... end blocks

Comments start with ``#`` or ``--`` followed by a space and run to the end
of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from ..proc_algebra import (
    EQ,
    NEQ,
    Choice,
    Constraint,
    IfThenElse,
    ProcessConfiguration,
    Recv,
    Send,
    classify_process,
    render_process,
    seq,
)
from ..strand_model import QUESTION, CstrMsg, RecvMsg, SendMsg, SpecStrand, StrandSpec
from ..term_kernel import (
    FRESH,
    MSG,
    App,
    ConvergentTheory,
    Rule,
    Signature,
    Term,
    TermError,
    Var,
    render,
)

SECTIONS = ("THEORY", "PROCESSES", "DOMAINS", "ATTACKS")
KEYWORDS = {
    "sorts", "subsort", "op", "var", "rule", "role", "attack", "end", "never",
    "inI", "strand", "if", "then", "else", "nilP", "eq", "neq",
} | set(SECTIONS)
RELOPS = {"eq": EQ, "=": EQ, "neq": NEQ, "!=": NEQ}


class SpecSyntaxError(Exception):
    def __init__(self, line: int, col: int, expected: str, found: str = ""):
        msg = f"line {line}, column {col}: expected {expected}"
        if found:
            msg += f", found {found!r}"
        super().__init__(msg)
        self.line = line
        self.col = col
        self.expected = expected


class ResolutionError(Exception):
    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*|--(?=[ \t\n-])[^\n]*)
  | (?P<string>"[^"\n]*")
  | (?P<arrow>->)
  | (?P<neq>!=)
  | (?P<ident>[A-Za-z0-9_][A-Za-z0-9_']*\??)
  | (?P<punct>[()\[\]{},.;:+\-?|=&<])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list:
    toks = []
    line, lstart, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(line, pos - lstart + 1, "a token", text[pos])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            lstart = m.end()
        elif kind not in ("ws", "comment"):
            t = m.group()
            if kind == "arrow" or kind == "neq":
                kind = "punct"
            toks.append(Token(kind, t, line, m.start() - lstart + 1))
        pos = m.end()
    toks.append(Token("eof", "", line, pos - lstart + 1))
    return toks


# -------------------------------------------------------------- attack AST


@dataclass
class StrandPattern:
    role: str
    items: tuple
    future: Optional[tuple] = None


@dataclass
class AttackSpec:
    ident: str
    name: str = ""
    strands: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    nevers: list = field(default_factory=list)


@dataclass
class SpecFile:
    sig: Signature
    theory: ConvergentTheory
    roles: dict
    domains: dict
    attacks: list
    variables: dict = field(default_factory=dict)

    @property
    def config(self) -> ProcessConfiguration:
        return ProcessConfiguration.from_roles(self.roles)

    def attack(self, ident) -> AttackSpec:
        for a in self.attacks:
            if a.ident == str(ident):
                return a
        raise KeyError(f"no attack {ident}")


# ------------------------------------------------------------------ parser


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.pos = 0
        self.sig = Signature()
        self.vars: dict = {}
        self.rules: list = []
        self.roles: dict = {}
        self.domains: dict = {}
        self.attacks: list = []
        self.infix: dict = {}
        self.prefix: dict = {}

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def at(self, *texts) -> bool:
        t = self.tok
        return t.kind != "eof" and t.text in texts

    def next(self) -> Token:
        t = self.tok
        self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        return self.next()

    def ident(self, what: str = "an identifier") -> Token:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            self.fail(what)
        return self.next()

    def fail(self, expected: str):
        t = self.tok
        raise SpecSyntaxError(t.line, t.col, expected, t.text or "end of input")

    def resolve_error(self, t: Token, msg: str):
        raise ResolutionError(t.line, t.col, msg)

    # -- top level
    def parse(self) -> SpecFile:
        section = None
        while self.tok.kind != "eof":
            if self.tok.text in SECTIONS:
                section = self.next().text
                continue
            if section is None:
                self.fail("a section header (THEORY, PROCESSES, DOMAINS, ATTACKS)")
            getattr(self, f"_{section.lower()}_stmt")()
        try:
            self.sig.check_nonempty()
        except TermError as e:
            raise ResolutionError(1, 1, str(e)) from None
        th = ConvergentTheory(self.rules, self.sig)
        dom = {s: tuple(v) for s, v in self.domains.items()}
        return SpecFile(self.sig, th, self.roles, dom, self.attacks, dict(self.vars))

    # -- THEORY
    def _theory_stmt(self):
        kw = self.tok.text
        if kw == "sorts":
            self.next()
            while self.tok.kind == "ident" and self.tok.text not in KEYWORDS:
                self.sig.add_sort(self.next().text)
        elif kw == "subsort":
            self.next()
            subs = [self.ident("a sort")]
            while not self.at("<"):
                subs.append(self.ident("a sort or '<'"))
            self.next()
            sup = self.ident("a sort")
            for t in subs + [sup]:
                self._need_sort(t.text, t)
            for t in subs:
                self.sig.add_sort(t.text, [sup.text])
        elif kw == "op":
            self.next()
            names = self._op_names()
            self.expect(":")
            args = []
            while not self.at("->"):
                a = self.ident("a sort or '->'")
                self._need_sort(a.text, a)
                args.append(a.text)
            self.next()
            res = self.ident("a result sort")
            self._need_sort(res.text, res)
            for n in names:
                self._declare_op(n, args, res)
        elif kw == "var":
            self.next()
            names = []
            while not self.at(":"):
                names.append(self.ident("a variable name").text)
            self.expect(":")
            s = self.ident("a sort")
            self._need_sort(s.text, s)
            for n in names:
                self.vars[n] = Var(n, s.text)
        elif kw == "rule":
            self.next()
            start = self.tok
            lhs = self.term()
            self.expect("->")
            rhs = self.term()
            try:
                self.rules.append(Rule(lhs, rhs))
            except TermError as e:
                self.resolve_error(start, str(e))
        else:
            self.fail("a THEORY statement (sorts, subsort, op, var, rule)")

    def _op_names(self) -> list:
        """Operator names; adjacent tokens glue together, as in ``_;_``."""
        names = []
        prev = None
        while not self.at(":"):
            t = self.tok
            if t.kind == "eof" or t.text in SECTIONS:
                self.fail("':'")
            self.next()
            if prev is not None and prev.line == t.line and prev.col + len(prev.text) == t.col:
                names[-1] += t.text
            else:
                names.append(t.text)
            prev = t
        if not names:
            self.fail("an operator name")
        return names

    def _need_sort(self, s: str, t: Token):
        if s not in self.sig.sorts:
            self.resolve_error(t, f"undeclared sort {s}")

    def _declare_op(self, name: str, args, res: Token):
        if name.startswith("_") and name.endswith("_") and name.count("_") == 2 and len(args) == 2:
            self.infix[name[1:-1]] = name
        elif name.endswith("_") and name.count("_") == 1 and len(args) == 1:
            self.prefix[name[:-1]] = name
        elif "_" in name and name not in ("_",) and name.count("_") == len(args) and args:
            self.resolve_error(res, f"unsupported mixfix operator {name}")
        self.sig.add_op(name, args, res.text)

    # -- terms
    def term(self, min_prec: int = 0) -> Term:
        left = self._primary()
        while True:
            t = self.tok
            op = self.infix.get(t.text) if t.kind in ("ident", "punct") else None
            if op is None:
                break
            prec = 10 if t.text == ";" else 20
            if prec < min_prec:
                break
            self.next()
            right = self.term(prec)  # right-associative
            left = self._app(op, [left, right], t)
        return left

    def _primary(self) -> Term:
        t = self.tok
        if self.at("("):
            self.next()
            inner = self.term()
            self.expect(")")
            return inner
        if t.kind != "ident" or t.text in KEYWORDS:
            self.fail("a term")
        name = self.next().text
        if name in self.prefix and not self.at("("):
            arg = self.term(30)
            return self._app(self.prefix[name], [arg], t)
        if self.at("(") and name in self.sig.ops:
            self.next()
            args = [self.term()]
            while self.at(","):
                self.next()
                args.append(self.term())
            self.expect(")")
            return self._app(name, args, t)
        if self.at(":") and self.peek().kind == "ident":
            self.next()
            s = self.next()
            self._need_sort(s.text, s)
            prev = self.vars.get(name)
            if prev is not None and prev.sort != s.text:
                self.resolve_error(t, f"variable {name} redeclared with sort {s.text}")
            v = Var(name, s.text)
            self.vars.setdefault(name, v)
            return v
        if name in self.vars:
            return self.vars[name]
        if name in self.sig.ops:
            return self._app(name, [], t)
        if name in self.prefix:
            arg = self.term(30)
            return self._app(self.prefix[name], [arg], t)
        self.resolve_error(t, f"unknown identifier {name}")

    def _app(self, op: str, args, t: Token) -> Term:
        term = App(op, args)
        try:
            self.sig.sort_of(term)
        except TermError as e:
            self.resolve_error(t, str(e))
        return term

    def constraint(self) -> Constraint:
        save = self.pos
        try:
            lhs = self.term()
            if self.tok.text not in RELOPS:
                self.fail("'eq', 'neq', '=' or '!='")
            kind = RELOPS[self.next().text]
            rhs = self.term()
            return Constraint(kind, lhs, rhs)
        except SpecSyntaxError:
            if self.toks[save].text != "(":
                raise
            self.pos = save + 1
            c = self.constraint()
            self.expect(")")
            return c

    # -- processes
    def process(self):
        left = self._seq()
        while self.at("?"):
            self.next()
            right = self._seq()
            left = (Choice(left, right),)
        return left

    def _seq(self):
        parts = [self._atom()]
        while self.at("."):
            self.next()
            parts.append(self._atom())
        return seq(*parts)

    def _atom(self):
        t = self.tok
        if self.at("+", "-"):
            self.next()
            self.expect("(")
            m = self.term()
            self.expect(")")
            return (Send(m),) if t.text == "+" else (Recv(m),)
        if self.at("nilP"):
            self.next()
            return ()
        if self.at("if"):
            self.next()
            c = self.constraint()
            self.expect("then")
            p = self.process()
            self.expect("else")
            q = self.process()
            return (IfThenElse(c, p, q),)
        if self.at("("):
            self.next()
            p = self.process()
            self.expect(")")
            return p
        self.fail("a process (+(m), -(m), nilP, if, or '(')")

    def _processes_stmt(self):
        self.expect("role")
        name = self.ident("a role name")
        if name.text in self.roles:
            self.resolve_error(name, f"duplicate role {name.text}")
        self.expect("=")
        p = self.process()
        self.roles[name.text] = classify_process(p)

    # -- DOMAINS
    def _domains_stmt(self):
        s = self.ident("a sort")
        self._need_sort(s.text, s)
        self.expect("=")
        vals = []
        while self.tok.kind == "ident" and self.tok.text not in KEYWORDS and self.peek().text != "=":
            vals.append(self.term())
        if not vals:
            self.fail("at least one domain value")
        for v in vals:
            if not self.sig.leq(self.sig.sort_of(v), s.text):
                self.resolve_error(s, f"domain value {render(v)} is not of sort {s.text}")
        self.domains.setdefault(s.text, [])
        self.domains[s.text].extend(vals)

    # -- ATTACKS
    def _attacks_stmt(self):
        self.expect("attack")
        ident = self.ident("an attack number or name").text
        name = ""
        if self.tok.kind == "string":
            name = self.next().text[1:-1]
        att = AttackSpec(ident, name)
        while not self.at("end"):
            if self.at("strand"):
                self.next()
                att.strands.append(self._strand_pattern())
            elif self.at("inI"):
                self.next()
                att.goals.append(self.term())
            elif self.at("never"):
                self.next()
                group = [self._strand_pattern()]
                while self.at("&"):
                    self.next()
                    group.append(self._strand_pattern())
                att.nevers.append(group)
            else:
                self.fail("'strand', 'inI', 'never' or 'end'")
        self.next()
        self.attacks.append(att)

    def _strand_pattern(self) -> StrandPattern:
        role = self.ident("a role name")
        self.expect("[")
        items, future = [], None
        cur = items
        while not self.at("]"):
            if self.at("|") and future is None:
                self.next()
                future = []
                cur = future
                continue
            cur.append(self._item())
            if self.at(","):
                self.next()
            elif not self.at("]", "|"):
                self.fail("',' or ']'")
        self.next()
        return StrandPattern(role.text, tuple(items), tuple(future) if future is not None else None)

    def _item(self):
        if self.at("+", "-"):
            sign = self.next().text
            self.expect("(")
            m = self.term()
            self.expect(")")
            return SendMsg(m) if sign == "+" else RecvMsg(m)
        if self.at("{"):
            self.next()
            if self.at("?"):
                self.next()
                c = QUESTION
            else:
                c = self.constraint()
            self.expect(",")
            n = self.tok
            if n.text not in ("1", "2"):
                self.fail("branch number 1 or 2")
            self.next()
            self.expect("}")
            return CstrMsg(c, int(n.text))
        self.fail("a strand item (+(m), -(m) or {C, n})")


def parse_spec(text) -> SpecFile:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise SpecSyntaxError(1, e.start + 1, "UTF-8 text") from None
    return _Parser(text).parse()


def parse_term(spec: SpecFile, text: str) -> Term:
    p = _Parser(text)
    _adopt(p, spec)
    t = p.term()
    if p.tok.kind != "eof":
        p.fail("end of term")
    return t


def parse_process(spec: SpecFile, text: str):
    p = _Parser(text)
    _adopt(p, spec)
    proc = p.process()
    if p.tok.kind != "eof":
        p.fail("end of process")
    return proc


def parse_items(spec: SpecFile, text: str) -> tuple:
    p = _Parser(text)
    _adopt(p, spec)
    sp = p._strand_pattern()
    return sp.items


def parse_strand_spec(spec: SpecFile, text: str) -> StrandSpec:
    """Read ``Role [ items ]`` lines; a strand's branch path is its constraint numbers."""
    p = _Parser(text)
    _adopt(p, spec)
    out = []
    while p.tok.kind != "eof":
        sp = p._strand_pattern()
        if sp.future is not None:
            p.fail("a strand without '|'")
        path = tuple(u.num for u in sp.items if isinstance(u, CstrMsg))
        out.append(SpecStrand(sp.role, path, sp.items))
    return StrandSpec(tuple(out))


def print_strand_spec(spec: StrandSpec) -> str:
    return "".join(f"{s.role} [ {', '.join(str(u) for u in s.items)} ]\n" for s in spec)


def _adopt(p: _Parser, spec: SpecFile):
    p.sig = spec.sig
    p.vars = dict(spec.variables)
    for name, decls in spec.sig.ops.items():
        if name.startswith("_") and name.endswith("_") and name.count("_") == 2:
            p.infix[name[1:-1]] = name
        elif name.endswith("_") and name.count("_") == 1:
            p.prefix[name[:-1]] = name


# ---------------------------------------------------------------- printing


def render_var_decls(vs) -> list:
    by_sort: dict = {}
    for v in vs:
        by_sort.setdefault(v.sort, set()).add(v.name)
    return [f"  var {' '.join(sorted(n))} : {s}" for s, n in sorted(by_sort.items())]


def print_spec(spec: SpecFile) -> str:
    sig = spec.sig
    lines = ["THEORY"]
    user = sorted(s for s in sig.sorts if s not in (MSG, FRESH))
    if user:
        lines.append("  sorts " + " ".join(user))
    for s in sorted(sig.sorts):
        sups = sorted(sig.supers.get(s, ()))
        for sup in sups:
            lines.append(f"  subsort {s} < {sup}")
    for name in sorted(sig.ops):
        for d in sig.ops[name]:
            lines.append(f"  op {name} : {' '.join(d.args)}{' ' if d.args else ''}-> {d.result}")
    lines.extend(render_var_decls(spec.variables.values()))
    for r in spec.theory.rules:
        lines.append(f"  rule {render(r.lhs)} -> {render(r.rhs)}")
    lines.append("PROCESSES")
    for role, p in spec.roles.items():
        lines.append(f"  role {role} = {render_process(p)}")
    lines.append("DOMAINS")
    for s, vals in sorted(spec.domains.items()):
        lines.append(f"  {s} = {' '.join(render(v) for v in vals)}")
    if spec.attacks:
        lines.append("ATTACKS")
    for a in spec.attacks:
        lines.append(f"  attack {a.ident}" + (f' "{a.name}"' if a.name else ""))
        lines.extend(f"    strand {_pattern_text(p)}" for p in a.strands)
        lines.extend(f"    inI {render(g)}" for g in a.goals)
        lines.extend("    never " + " & ".join(_pattern_text(p) for p in g) for g in a.nevers)
        lines.append("  end")
    return "\n".join(lines) + "\n"


def _pattern_text(p: StrandPattern) -> str:
    body = ", ".join(str(u) for u in p.items)
    if p.future is not None:
        body += " | " + ", ".join(str(u) for u in p.future)
    return f"{p.role} [ {body} ]"
