"""Ground forwards execution: process-algebra rules and constrained strand rules.

Both semantics expose the same small interface (``initial``, ``successors``)
and emit identical ``TransitionLabel`` values, which is what the bisimulation
harness compares.
"""

from __future__ import annotations

import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Union

from .proc_algebra import (
    Choice,
    Constraint,
    IfThenElse,
    LabeledProcess,
    Process,
    ProcessConfiguration,
    Recv,
    Send,
    UnboundConstraint,
    fresh_vars,
    subst_process,
)
from .strand_model import (
    QUESTION,
    CstrMsg,
    RecvMsg,
    SendMsg,
    StrandSpec,
    constraint_label,
    to_cstr_ss,
)
from .term_kernel import (
    FRESH,
    ConvergentTheory,
    Signature,
    Term,
    Var,
    apply,
    fresh_rename,
    is_ground,
    render,
    term_key,
    variables,
)

SEND_LEARN = "+"
SEND_SILENT = ""
RECV = "-"
IF = "if"
CHOOSE = "?"


class MissingDomain(Exception):
    pass


class ScheduleStuck(Exception):
    def __init__(self, index: int, label=None):
        super().__init__(f"schedule stuck at index {index}: {label}")
        self.index = index
        self.label = label


# ------------------------------------------------------------------ labels


@dataclass(frozen=True)
class TransitionLabel:
    role: str
    session: int
    step: int
    kind: str
    term: Union[Term, Constraint, str, None]
    branch: int = 0

    def key(self) -> tuple:
        return self._key

    @cached_property
    def _key(self) -> tuple:
        t = self.term
        if isinstance(t, Constraint):
            tk = (t.kind, term_key(t.lhs), term_key(t.rhs))
        elif t is None or isinstance(t, str):
            tk = (str(t),)
        else:
            tk = term_key(t)
        return (self.role, self.session, self.step, self.kind, tk, self.branch)

    def action(self) -> str:
        if self.kind == CHOOSE:
            return "?"
        if self.kind == IF:
            return str(self.term)
        return f"{self.kind}{render(self.term)}" if self.kind else render(self.term)

    def __str__(self):
        return f"({self.role}, {self.session}, {self.step}, {self.action()}, {self.branch})"

    def to_json(self) -> dict:
        return {
            "role": self.role,
            "session": self.session,
            "step": self.step,
            "action": self.action(),
            "branch": self.branch,
        }


# ------------------------------------------------------------ choice domain


@dataclass
class ChoiceDomain:
    """Finite ground values per sort used to instantiate choice variables."""

    values: dict = field(default_factory=dict)
    sig: Optional[Signature] = None

    def for_var(self, v: Var) -> list:
        """Values of every domain sort below the variable's sort."""
        if self.sig is None:
            if v.sort in self.values:
                return list(self.values[v.sort])
        else:
            acc = []
            for s in sorted(self.values):
                if self.sig.leq(s, v.sort):
                    acc.extend(t for t in self.values[s] if t not in acc)
            if acc:
                return acc
        raise MissingDomain(f"no choice domain for sort {v.sort} (variable {v.name})")

    def assignments(self, vs: Iterable[Var]):
        vs = sorted(vs, key=lambda v: (v.name, v.sort))
        if not vs:
            yield {}
            return
        pools = [self.for_var(v) for v in vs]
        for combo in itertools.product(*pools):
            yield dict(zip(vs, combo))


def _choice_free(t: Term) -> list:
    free = [v for v in variables(t) if v.sort != FRESH]
    if any(v.sort == FRESH for v in variables(t)):
        raise UnboundConstraint(f"unrenamed fresh variable in {render(t)}")
    return free


# ------------------------------------------------------------- PA semantics


@dataclass(frozen=True)
class PAState:
    processes: tuple
    ik: frozenset

    def key(self):
        return (
            tuple((lp.role, lp.session, lp.step, lp.body) for lp in self.processes),
            self.ik,
        )

    def __eq__(self, other):
        return isinstance(other, PAState) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def max_id(self, role: str) -> int:
        return max((lp.session for lp in self.processes if lp.role == role), default=0)


def _sorted_ik(ik) -> list:
    return sorted(ik, key=term_key)


class PASemantics:
    """Rules PA++, PA+, PA-, PAif1/2, PA?1/2 and the fused PA&."""

    name = "pa"

    def __init__(self, roles, th: ConvergentTheory, dom: ChoiceDomain,
                 ik_guard: bool = True):
        if isinstance(roles, ProcessConfiguration):
            roles = roles.roles()
        self.roles = dict(roles)
        self.th = th
        self.dom = dom
        self.ik_guard = ik_guard
        self._inst: dict = {}
        self._subst: dict = {}

    def _apply(self, p: Process, sigma: dict) -> Process:
        if not sigma:
            return p
        key = (p, frozenset(sigma.items()))
        hit = self._subst.get(key)
        if hit is None:
            hit = subst_process(p, sigma)
            self._subst[key] = hit
        return hit

    def instance(self, role: str, session: int) -> Process:
        key = (role, session)
        hit = self._inst.get(key)
        if hit is None:
            p = self.roles[role]
            hit = subst_process(p, fresh_rename(role, session, fresh_vars(p)))
            self._inst[key] = hit
        return hit

    def initial(self) -> PAState:
        return PAState((), frozenset())

    def _body_steps(self, role, session, step, body: Process, ik):
        """(label, residual body, learned term or None) for the first action."""
        if not body:
            return
        head, rest = body[0], body[1:]
        if isinstance(head, Send):
            for sigma in self.dom.assignments(_choice_free(head.msg)):
                m = self.th.normalize(apply(head.msg, sigma))
                nxt = self._apply(rest, sigma)
                if not self.ik_guard or m not in ik:
                    yield TransitionLabel(role, session, step, SEND_LEARN, m), nxt, m
                yield TransitionLabel(role, session, step, SEND_SILENT, m), nxt, None
        elif isinstance(head, Recv):
            for f in _sorted_ik(ik):
                for sigma in self.th.match_modulo(head.msg, f):
                    yield TransitionLabel(role, session, step, RECV, f), self._apply(rest, sigma), None
        elif isinstance(head, IfThenElse):
            if head.cond.holds(self.th):
                yield TransitionLabel(role, session, step, IF, head.cond, 1), head.then + rest, None
            else:
                yield TransitionLabel(role, session, step, IF, head.cond, 2), head.orelse + rest, None
        elif isinstance(head, Choice):
            yield TransitionLabel(role, session, step, CHOOSE, QUESTION, 1), head.left + rest, None
            yield TransitionLabel(role, session, step, CHOOSE, QUESTION, 2), head.right + rest, None

    def successors(self, st: PAState) -> list:
        out = []
        procs = list(st.processes)
        for k, lp in enumerate(procs):
            for label, body, learned in self._body_steps(lp.role, lp.session, lp.step, lp.body, st.ik):
                new = procs[:k] + [LabeledProcess(lp.role, lp.session, lp.step + 1, body)] + procs[k + 1:]
                ik = st.ik | {learned} if learned is not None else st.ik
                out.append((label, PAState(tuple(new), ik)))
        for role in sorted(self.roles):
            i = st.max_id(role) + 1
            body = self.instance(role, i)
            for label, rest, learned in self._body_steps(role, i, 1, body, st.ik):
                new = sorted(list(procs) + [LabeledProcess(role, i, 2, rest)], key=lambda lp: (lp.role, lp.session))
                ik = st.ik | {learned} if learned is not None else st.ik
                out.append((label, PAState(tuple(new), ik)))
        out.sort(key=lambda p: p[0].key())
        return out


# ------------------------------------------------------------- FW semantics


class FWStrand:
    """A partially executed strand: role, session and ground past.

    ``cands`` lists the (spec index, substitution) pairs whose prefix matches
    the past; it is derived data and excluded from equality.
    """

    __slots__ = ("role", "session", "past", "cands", "_hash")

    def __init__(self, role: str, session: int, past: tuple, cands: tuple = ()):
        self.role = role
        self.session = session
        self.past = past
        self.cands = cands
        self._hash = hash((role, session, past))

    def __eq__(self, other):
        return (
            isinstance(other, FWStrand)
            and self.role == other.role
            and self.session == other.session
            and self.past == other.past
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"({self.role}, {self.session}) [{', '.join(str(u) for u in self.past)}]"


@dataclass(frozen=True)
class FWState:
    strands: tuple
    ik: frozenset

    def max_id(self, role: str) -> int:
        return max((s.session for s in self.strands if s.role == role), default=0)


class FWSemantics:
    """Rules F++, F+, F++&, F+&, F-, F-&, Fif, F?, F?&."""

    name = "fw"

    def __init__(self, spec: StrandSpec, th: ConvergentTheory, dom: ChoiceDomain,
                 ik_guard: bool = True):
        self.spec = spec
        self.th = th
        self.dom = dom
        self.ik_guard = ik_guard
        self._inst: dict = {}

    def initial(self) -> FWState:
        return FWState((), frozenset())

    def instance(self, idx: int, session: int) -> tuple:
        key = (idx, session)
        hit = self._inst.get(key)
        if hit is None:
            hit = self.spec.strands[idx].instantiate(session)
            self._inst[key] = hit
        return hit

    def _extensions(self, session: int, j: int, cands, ik) -> dict:
        """Group candidate next items by the ground item they would append."""
        groups: dict = {}
        for idx, theta in cands:
            items = self.instance(idx, session)
            if j >= len(items):
                continue
            u = items[j]
            if isinstance(u, SendMsg):
                msg = apply(u.msg, theta)
                for sigma in self.dom.assignments(_choice_free(msg)):
                    g = SendMsg(self.th.normalize(apply(msg, sigma)))
                    groups.setdefault(g, []).append((idx, {**theta, **sigma}))
            elif isinstance(u, RecvMsg):
                pat = apply(u.msg, theta)
                for f in _sorted_ik(ik):
                    for s in self.th.match_modulo(pat, f):
                        groups.setdefault(RecvMsg(f), []).append((idx, {**theta, **s}))
            elif u.question:
                groups.setdefault(u, []).append((idx, theta))
            else:
                c = u.cstr.subst(theta)
                if c.holds(self.th):
                    groups.setdefault(CstrMsg(c, u.num), []).append((idx, theta))
        return groups

    def _labels(self, role, session, j, g, ik):
        if isinstance(g, SendMsg):
            if not self.ik_guard or g.msg not in ik:
                yield TransitionLabel(role, session, j, SEND_LEARN, g.msg), g.msg
            yield TransitionLabel(role, session, j, SEND_SILENT, g.msg), None
        elif isinstance(g, RecvMsg):
            yield TransitionLabel(role, session, j, RECV, g.msg), None
        elif g.question:
            yield TransitionLabel(role, session, j, CHOOSE, QUESTION, g.num), None
        else:
            yield TransitionLabel(role, session, j, IF, constraint_label(g), g.num), None

    def successors(self, st: FWState) -> list:
        out = []
        strands = list(st.strands)
        for k, s in enumerate(strands):
            j = len(s.past)
            for g, cands in self._extensions(s.session, j, s.cands, st.ik).items():
                ns = FWStrand(s.role, s.session, s.past + (g,), tuple(cands))
                new = tuple(strands[:k] + [ns] + strands[k + 1:])
                for label, learned in self._labels(s.role, s.session, j + 1, g, st.ik):
                    ik = st.ik | {learned} if learned is not None else st.ik
                    out.append((label, FWState(new, ik)))
        for role in self.spec.roles():
            i = st.max_id(role) + 1
            cands = [(idx, {}) for idx, _ in self.spec.by_role(role)]
            for g, gc in self._extensions(i, 0, cands, st.ik).items():
                ns = FWStrand(role, i, (g,), tuple(gc))
                new = tuple(sorted(strands + [ns], key=lambda x: (x.role, x.session)))
                for label, learned in self._labels(role, i, 1, g, st.ik):
                    ik = st.ik | {learned} if learned is not None else st.ik
                    out.append((label, FWState(new, ik)))
        out.sort(key=lambda p: p[0].key())
        return out


# ------------------------------------------------------------ entry points


def pa_enabled(st: PAState, dom: ChoiceDomain, spec, th: ConvergentTheory) -> list:
    return PASemantics(spec, th, dom).successors(st)


def fw_enabled(st: FWState, dom: ChoiceDomain, spec: StrandSpec, th: ConvergentTheory) -> list:
    return FWSemantics(spec, th, dom).successors(st)


def make_semantics(kind: str, roles, th: ConvergentTheory, dom: ChoiceDomain, **kw):
    if kind == "pa":
        return PASemantics(roles, th, dom, **kw)
    if kind == "fw":
        spec = roles if isinstance(roles, StrandSpec) else to_cstr_ss(roles)
        return FWSemantics(spec, th, dom, **kw)
    raise ValueError(f"unknown semantics {kind!r}")


def _same_label(lab: TransitionLabel, want: TransitionLabel, th) -> bool:
    if lab == want:
        return True
    if th is None or lab.kind != IF or want.kind != IF or not isinstance(lab.term, Constraint):
        return False
    if lab.key()[:4] != want.key()[:4] or lab.branch != want.branch:
        return False
    nf = th.normalize
    return lab.term.map_terms(nf) == want.term.map_terms(nf)


def run_trace(sem, schedule: Iterable[TransitionLabel], th=None, taken: Optional[list] = None):
    """Replay labels deterministically; raise ScheduleStuck at the first miss.

    With ``th``, guard labels match modulo normalization of their terms, and
    ``taken`` (if given) collects the labels actually fired.
    """
    st = sem.initial()
    for k, label in enumerate(schedule):
        for lab, nxt in sem.successors(st):
            if _same_label(lab, label, th):
                st = nxt
                if taken is not None:
                    taken.append(lab)
                break
        else:
            raise ScheduleStuck(k, label)
    return st


@dataclass
class ExploreResult:
    traces: list
    states: int
    transitions: int
    max_depth: int
    truncated: bool = False

    def labels(self) -> set:
        return {lab for t in self.traces for lab in t}


def explore(sem, depth: int, seed: int = 0, strategy: str = "bfs",
            samples: int = 64, max_states: Optional[int] = None) -> ExploreResult:
    """Bounded exploration; bfs returns one trace per distinct reachable state."""
    if strategy == "bfs":
        init = sem.initial()
        seen = {init: ()}
        order = [()]
        frontier = deque([(init, ())])
        transitions = 0
        reached = 0
        truncated = False
        while frontier:
            st, trace = frontier.popleft()
            if len(trace) >= depth:
                continue
            for label, nxt in sem.successors(st):
                transitions += 1
                if nxt in seen:
                    continue
                t2 = trace + (label,)
                seen[nxt] = t2
                order.append(t2)
                reached = max(reached, len(t2))
                if max_states is not None and len(seen) >= max_states:
                    truncated = True
                    frontier.clear()
                    break
                frontier.append((nxt, t2))
        return ExploreResult(order, len(seen), transitions, reached, truncated)
    if strategy == "random":
        rng = random.Random(seed)
        traces = set()
        transitions = 0
        for _ in range(samples):
            st = sem.initial()
            trace = ()
            for _ in range(depth):
                succ = sem.successors(st)
                if not succ:
                    break
                transitions += 1
                label, st = succ[rng.randrange(len(succ))]
                trace += (label,)
            traces.add(trace)
        ordered = sorted(traces, key=lambda t: [lab.key() for lab in t])
        return ExploreResult(ordered, len(ordered), transitions, max((len(t) for t in ordered), default=0))
    raise ValueError(f"unknown strategy {strategy!r}")


def ik_from_labels(labels: Iterable[TransitionLabel]) -> frozenset:
    return frozenset(lab.term for lab in labels if lab.kind == SEND_LEARN)


def state_ik(st) -> list:
    return _sorted_ik(st.ik)


def fw_state_strands(st: FWState) -> list:
    return [(s.role, s.session, s.past) for s in st.strands]


def is_fully_ground(label: TransitionLabel) -> bool:
    t = label.term
    if isinstance(t, Constraint):
        return not t.vars()
    if t is None or isinstance(t, str):
        return True
    return is_ground(t)
