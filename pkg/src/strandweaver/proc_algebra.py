"""Process-algebra syntax: processes, constraints, shared variables, well-formedness.

A process is a tuple of actions.  Sequential composition is tuple
concatenation and ``nilP`` is the empty tuple, so associativity and the
identity laws hold by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

from .term_kernel import (
    FRESH,
    App,
    ConvergentTheory,
    Term,
    TermError,
    Var,
    apply,
    render,
    subterms,
    variables,
)

EQ = "eq"
NEQ = "neq"


class KindConflict(TermError):
    pass


class NotWellFormed(Exception):
    def __init__(self, role: str, report: "WellFormedness"):
        super().__init__(f"role {role}: {report.diagnostic}")
        self.role = role
        self.report = report


class UnboundConstraint(Exception):
    pass


@dataclass(frozen=True)
class Constraint:
    kind: str
    lhs: Term
    rhs: Term

    def __post_init__(self):
        if self.kind not in (EQ, NEQ):
            raise ValueError(f"constraint kind must be {EQ} or {NEQ}")

    def negate(self) -> "Constraint":
        return Constraint(NEQ if self.kind == EQ else EQ, self.lhs, self.rhs)

    def vars(self) -> frozenset:
        return variables(self.lhs) | variables(self.rhs)

    def subst(self, s) -> "Constraint":
        return Constraint(self.kind, apply(self.lhs, s), apply(self.rhs, s))

    def map_terms(self, f) -> "Constraint":
        return Constraint(self.kind, f(self.lhs), f(self.rhs))

    def holds(self, th: ConvergentTheory) -> bool:
        if self.vars():
            raise UnboundConstraint(str(self))
        same = th.normalize(self.lhs) == th.normalize(self.rhs)
        return same if self.kind == EQ else not same

    def __str__(self):
        return f"{render(self.lhs)} {self.kind} {render(self.rhs)}"


@dataclass(frozen=True)
class Send:
    msg: Term


@dataclass(frozen=True)
class Recv:
    msg: Term


@dataclass(frozen=True)
class Choice:
    left: tuple
    right: tuple


@dataclass(frozen=True)
class IfThenElse:
    cond: Constraint
    then: tuple
    orelse: tuple


Action = Union[Send, Recv, Choice, IfThenElse]
Process = tuple
NIL: Process = ()


def seq(*parts) -> Process:
    """Sequential composition; accepts actions and processes, drops nilP."""
    out = []
    for p in parts:
        if isinstance(p, tuple):
            out.extend(p)
        elif p is not None:
            out.append(p)
    return tuple(out)


# ------------------------------------------------------------ traversal


def map_terms(p: Process, f) -> Process:
    out = []
    for a in p:
        if isinstance(a, Send):
            out.append(Send(f(a.msg)))
        elif isinstance(a, Recv):
            out.append(Recv(f(a.msg)))
        elif isinstance(a, Choice):
            out.append(Choice(map_terms(a.left, f), map_terms(a.right, f)))
        else:
            out.append(IfThenElse(a.cond.map_terms(f), map_terms(a.then, f), map_terms(a.orelse, f)))
    return tuple(out)


def subst_process(p: Process, s) -> Process:
    if not s:
        return p
    return map_terms(p, lambda t: apply(t, s))


def proc_vars(p: Process) -> frozenset:
    acc = set()
    for a in p:
        if isinstance(a, (Send, Recv)):
            acc |= variables(a.msg)
        elif isinstance(a, Choice):
            acc |= proc_vars(a.left) | proc_vars(a.right)
        else:
            acc |= a.cond.vars() | proc_vars(a.then) | proc_vars(a.orelse)
    return frozenset(acc)


def sh_var(p: Process) -> frozenset:
    """Variables occurring on every branch of ``p``."""
    acc = set()
    for a in p:
        if isinstance(a, (Send, Recv)):
            acc |= variables(a.msg)
        elif isinstance(a, Choice):
            acc |= sh_var(a.left) & sh_var(a.right)
        else:
            acc |= a.cond.vars() | (sh_var(a.then) & sh_var(a.orelse))
    return frozenset(acc)


def paths(p: Process):
    """Root-to-leaf action sequences with the branch decisions taken."""
    if not p:
        yield ()
        return
    head, rest = p[0], p[1:]
    if isinstance(head, Choice):
        yield from paths(head.left + rest)
        yield from paths(head.right + rest)
    elif isinstance(head, IfThenElse):
        yield from paths(head.then + rest)
        yield from paths(head.orelse + rest)
    else:
        for tail in paths(rest):
            yield (head,) + tail


def count_paths(p: Process) -> int:
    return sum(1 for _ in paths(p))


# ---------------------------------------------------------- well-formedness


@dataclass(frozen=True)
class WellFormedness:
    ok: bool
    diagnostic: str = ""
    variables: tuple = ()
    location: tuple = ()

    def __bool__(self):
        return self.ok


def _names(vs) -> str:
    return "{" + ",".join(sorted(v.name for v in vs)) + "}"


def _wf(p: Process, loc: tuple):
    if not p:
        return None
    prefix, last = p[:-1], p[-1]
    here = loc + (len(p) - 1,)
    bad = _wf(prefix, loc)
    if bad is not None:
        return bad
    if isinstance(last, (Send, Recv)):
        sign = "+" if isinstance(last, Send) else "-"
        clash = (variables(last.msg) & proc_vars(prefix)) - sh_var(prefix)
        if clash:
            return WellFormedness(
                False,
                f"variable(s) {_names(clash)} of {sign}({render(last.msg)}) occur in the "
                f"preceding process but not on all of its branches: "
                f"shVar(pre) = {_names(sh_var(prefix))}, "
                f"{', '.join(sorted(v.name for v in clash))} in var(M) ∩ var(pre)",
                tuple(sorted(v.name for v in clash)),
                here,
            )
        return None
    if isinstance(last, IfThenElse):
        if not prefix:
            return WellFormedness(False, f"process begins with if {last.cond}", (), here)
        if not last.then:
            return WellFormedness(False, f"if {last.cond} has an empty then-branch", (), here)
        free = last.cond.vars() - sh_var(prefix)
        if free:
            return WellFormedness(
                False,
                f"constraint {last.cond} uses {_names(free)} not bound on every branch before it",
                tuple(sorted(v.name for v in free)),
                here,
            )
        return _wf(prefix + last.then, here + (1,)) or _wf(prefix + last.orelse, here + (2,))
    if not last.left and not last.right:
        return WellFormedness(False, "choice between two empty processes", (), here)
    return _wf(prefix + last.left, here + (1,)) or _wf(prefix + last.right, here + (2,))


def well_formed(p: Process) -> WellFormedness:
    if p and isinstance(p[0], IfThenElse):
        return WellFormedness(False, f"process begins with if {p[0].cond}", (), (0,))
    bad = _wf(p, ())
    return bad if bad is not None else WellFormedness(True)


# ------------------------------------------------------- variable kinds


def _path_kinds(path) -> dict:
    kinds = {}
    for a in path:
        if isinstance(a, (Send, Recv)):
            kind = "choice" if isinstance(a, Send) else "pattern"
            for t in subterms(a.msg):
                if t.__class__ is Var and t not in kinds:
                    if t.sort == FRESH:
                        if kind == "pattern":
                            raise KindConflict(f"fresh variable {t.name} first occurs in a received message")
                        kinds[t] = "fresh"
                    else:
                        kinds[t] = kind
        else:
            for v in a.cond.vars() if isinstance(a, IfThenElse) else ():
                kinds.setdefault(v, "pattern")
    return kinds


def _linear(p: Process):
    """Root-to-leaf sequences keeping constraints, for kind classification."""
    if not p:
        yield ()
        return
    head, rest = p[0], p[1:]
    if isinstance(head, Choice):
        yield from _linear(head.left + rest)
        yield from _linear(head.right + rest)
    elif isinstance(head, IfThenElse):
        for branch in (head.then, head.orelse):
            for tail in _linear(branch + rest):
                yield (head,) + tail
    else:
        for tail in _linear(rest):
            yield (head,) + tail


def variable_kinds(p: Process) -> dict:
    out: dict = {}
    for path in _linear(p):
        for v, k in _path_kinds(path).items():
            prev = out.setdefault(v, k)
            if prev != k:
                raise KindConflict(f"variable {v.name} is {prev} on one path and {k} on another")
    return out


def classify_process(p: Process) -> Process:
    kinds = variable_kinds(p)
    ren = {v: v.with_kind(k) for v, k in kinds.items()}
    return map_terms(p, lambda t: _retag(t, ren))


def _retag(t: Term, ren) -> Term:
    # Var equality ignores kind, so apply() would be a no-op; rebuild instead.
    if t.__class__ is Var:
        return ren.get(t, t)
    if t.__class__ is App and t.args:
        return App(t.op, [_retag(a, ren) for a in t.args])
    return t


def choice_vars(p: Process) -> frozenset:
    return frozenset(v for v, k in variable_kinds(p).items() if k == "choice")


def fresh_vars(p: Process) -> frozenset:
    return frozenset(v for v in proc_vars(p) if v.sort == FRESH)


# ------------------------------------------------------- configurations


@dataclass(frozen=True, order=True)
class LabeledProcess:
    role: str
    session: int
    step: int
    body: Process = field(compare=False)

    def key(self):
        return (self.role, self.session)


class ProcessConfiguration:
    """A set of labeled processes with pairwise distinct (role, session)."""

    def __init__(self, processes: Iterable[LabeledProcess] = ()):
        procs = sorted(processes, key=lambda lp: (lp.role, lp.session))
        seen = set()
        for lp in procs:
            if lp.key() in seen:
                raise ValueError(f"duplicate process label {lp.key()}")
            seen.add(lp.key())
        self.processes = tuple(procs)

    @classmethod
    def from_roles(cls, roles: dict) -> "ProcessConfiguration":
        return cls(LabeledProcess(r, 0, 0, p) for r, p in roles.items())

    def roles(self) -> dict:
        return {lp.role: lp.body for lp in self.processes}

    def __iter__(self):
        return iter(self.processes)

    def __len__(self):
        return len(self.processes)

    def __eq__(self, other):
        return isinstance(other, ProcessConfiguration) and self.processes == other.processes and all(
            a.body == b.body for a, b in zip(self.processes, other.processes)
        )

    def __hash__(self):
        return hash(tuple((lp.role, lp.session, lp.step, lp.body) for lp in self.processes))

    def well_formed(self) -> dict:
        return {lp.role: well_formed(lp.body) for lp in self.processes}

    def check(self):
        for lp in self.processes:
            rep = well_formed(lp.body)
            if not rep:
                raise NotWellFormed(lp.role, rep)


def classify_variables(config: ProcessConfiguration) -> ProcessConfiguration:
    return ProcessConfiguration(
        LabeledProcess(lp.role, lp.session, lp.step, classify_process(lp.body)) for lp in config
    )


# ------------------------------------------------------------ rendering


def render_process(p: Process) -> str:
    if not p:
        return "nilP"
    parts = []
    for a in p:
        if isinstance(a, Send):
            parts.append(f"+({render(a.msg)})")
        elif isinstance(a, Recv):
            parts.append(f"-({render(a.msg)})")
        elif isinstance(a, Choice):
            parts.append(f"(({render_process(a.left)}) ? ({render_process(a.right)}))")
        else:
            parts.append(
                f"(if {a.cond} then ({render_process(a.then)}) else ({render_process(a.orelse)}))"
            )
    return " . ".join(parts)
