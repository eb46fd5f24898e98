"""Constrained strands and the translation from processes to strand specifications."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

from .proc_algebra import (
    EQ,
    Choice,
    Constraint,
    IfThenElse,
    LabeledProcess,
    NotWellFormed,
    Process,
    ProcessConfiguration,
    Recv,
    Send,
    well_formed,
)
from .term_kernel import (
    FRESH,
    ConvergentTheory,
    Term,
    apply,
    canonical_renaming,
    fresh_rename,
    render,
    term_key,
    variables,
)

QUESTION = "?"


@dataclass(frozen=True)
class SendMsg:
    msg: Term

    def terms(self):
        return (self.msg,)

    def __str__(self):
        return f"+({render(self.msg)})"


@dataclass(frozen=True)
class RecvMsg:
    msg: Term

    def terms(self):
        return (self.msg,)

    def __str__(self):
        return f"-({render(self.msg)})"


@dataclass(frozen=True)
class CstrMsg:
    cstr: Union[Constraint, str]
    num: int

    def __post_init__(self):
        if self.num not in (1, 2):
            raise ValueError("branch number must be 1 or 2")
        if isinstance(self.cstr, str) and self.cstr != QUESTION:
            raise ValueError(f"unknown constraint {self.cstr!r}")

    @property
    def question(self) -> bool:
        return self.cstr == QUESTION

    def terms(self):
        return () if self.question else (self.cstr.lhs, self.cstr.rhs)

    def __str__(self):
        return f"{{{self.cstr}, {self.num}}}"


StrandItem = Union[SendMsg, RecvMsg, CstrMsg]


def item_vars(u: StrandItem) -> frozenset:
    acc = frozenset()
    for t in u.terms():
        acc |= variables(t)
    return acc


def items_vars(items: Iterable[StrandItem]) -> frozenset:
    acc = set()
    for u in items:
        acc |= item_vars(u)
    return frozenset(acc)


def map_item(u: StrandItem, f) -> StrandItem:
    if isinstance(u, SendMsg):
        return SendMsg(f(u.msg))
    if isinstance(u, RecvMsg):
        return RecvMsg(f(u.msg))
    if u.question:
        return u
    return CstrMsg(u.cstr.map_terms(f), u.num)


def subst_item(u: StrandItem, s) -> StrandItem:
    return u if not s else map_item(u, lambda t: apply(t, s))


def subst_items(items, s) -> tuple:
    return tuple(subst_item(u, s) for u in items)


def item_key(u: StrandItem) -> tuple:
    if isinstance(u, SendMsg):
        return (0, term_key(u.msg))
    if isinstance(u, RecvMsg):
        return (1, term_key(u.msg))
    if u.question:
        return (2, u.num)
    return (3, u.num, u.cstr.kind, term_key(u.cstr.lhs), term_key(u.cstr.rhs))


def render_items(items) -> str:
    return "[" + ", ".join(str(u) for u in items) + "]"


@dataclass(frozen=True)
class ConstrainedStrand:
    role: str
    session: int
    past: tuple
    future: tuple = ()

    def __str__(self):
        label = self.role if self.session == 0 else f"{self.role}, {self.session}"
        body = ", ".join(str(u) for u in self.past)
        if self.future:
            body += " | " + ", ".join(str(u) for u in self.future)
        return f"({label}) [{body}]"


@dataclass(frozen=True)
class SpecStrand:
    """A specification strand indexed by its role and branch path."""

    role: str
    path: tuple
    items: tuple

    def fresh_vars(self) -> frozenset:
        return frozenset(v for v in items_vars(self.items) if v.sort == FRESH)

    def instantiate(self, session: int) -> tuple:
        return subst_items(self.items, fresh_rename(self.role, session, self.fresh_vars()))

    def __str__(self):
        return f"({self.role}) {render_items(self.items)}"


@dataclass(frozen=True)
class StrandSpec:
    strands: tuple = field(default_factory=tuple)

    def by_role(self, role: str) -> list:
        return [(k, s) for k, s in enumerate(self.strands) if s.role == role]

    def roles(self) -> list:
        seen = []
        for s in self.strands:
            if s.role not in seen:
                seen.append(s.role)
        return seen

    def without(self, role: str, path_prefix: tuple) -> "StrandSpec":
        """Drop strands of ``role`` whose branch path starts with ``path_prefix``."""
        return StrandSpec(tuple(
            s for s in self.strands
            if not (s.role == role and s.path[: len(path_prefix)] == path_prefix)
        ))

    def __len__(self):
        return len(self.strands)

    def __iter__(self):
        return iter(self.strands)


# ---------------------------------------------------------- translation


def to_cstr_ss_star(p: Process, acc: tuple = (), path: tuple = ()) -> list:
    """Strand item lists of a process, paired with their branch paths."""
    if not p:
        return [(acc, path)]
    head, rest = p[0], p[1:]
    if isinstance(head, Send):
        return to_cstr_ss_star(rest, acc + (SendMsg(head.msg),), path)
    if isinstance(head, Recv):
        return to_cstr_ss_star(rest, acc + (RecvMsg(head.msg),), path)
    if isinstance(head, IfThenElse):
        return to_cstr_ss_star(head.then + rest, acc + (CstrMsg(head.cond, 1),), path + (1,)) + \
            to_cstr_ss_star(head.orelse + rest, acc + (CstrMsg(head.cond.negate(), 2),), path + (2,))
    if isinstance(head, Choice):
        return to_cstr_ss_star(head.left + rest, acc + (CstrMsg(QUESTION, 1),), path + (1,)) + \
            to_cstr_ss_star(head.right + rest, acc + (CstrMsg(QUESTION, 2),), path + (2,))
    raise TypeError(f"not a process action: {head!r}")


def to_cstr_ss(config, check: bool = True) -> StrandSpec:
    """Translate a specification configuration (or a role -> process dict)."""
    if isinstance(config, dict):
        config = ProcessConfiguration.from_roles(config)
    out = []
    for lp in config:
        if check:
            rep = well_formed(lp.body)
            if not rep:
                raise NotWellFormed(lp.role, rep)
        for items, path in to_cstr_ss_star(lp.body):
            out.append(SpecStrand(lp.role, path, items))
    return StrandSpec(tuple(out))


def residual_strands(lp: LabeledProcess) -> list:
    """toCstrSS of a (partially executed) labeled process as strands."""
    return [ConstrainedStrand(lp.role, lp.session, items) for items, _ in to_cstr_ss_star(lp.body)]


# ------------------------------------------------------ continuations


def match_items(patterns, ground, th: ConvergentTheory, theta=None) -> list:
    """All theta with patterns*theta =E ground, item by item."""
    thetas = [dict(theta or {})]
    for u, g in zip(patterns, ground):
        nxt = []
        for th0 in thetas:
            nxt.extend(match_item(u, g, th, th0))
        thetas = nxt
        if not thetas:
            break
    return thetas


def match_item(u: StrandItem, g: StrandItem, th: ConvergentTheory, theta: dict) -> list:
    if type(u) is not type(g):
        return []
    if isinstance(u, CstrMsg):
        if u.num != g.num or u.question != g.question:
            return []
        if u.question:
            return [theta]
        if u.cstr.kind != g.cstr.kind:
            return []
        out = []
        for s in th.match_modulo(apply(u.cstr.lhs, theta), g.cstr.lhs):
            t2 = {**theta, **s}
            for s2 in th.match_modulo(apply(u.cstr.rhs, t2), g.cstr.rhs):
                out.append({**t2, **s2})
        return out
    return [{**theta, **s} for s in th.match_modulo(apply(u.msg, theta), g.msg)]


def strand_continuations(spec: StrandSpec, prefix: ConstrainedStrand,
                         th: ConvergentTheory) -> set:
    """Continuations [u_{j+1}..u_n] rho theta of spec strands matching the past."""
    out = set()
    j = len(prefix.past)
    for _, s in spec.by_role(prefix.role):
        if len(s.items) < j:
            continue
        items = s.instantiate(prefix.session)
        for theta in match_items(items[:j], prefix.past, th):
            out.add(normalize_items(subst_items(items[j:], theta), th))
    return out


def normalize_items(items, th: ConvergentTheory) -> tuple:
    return tuple(
        u if isinstance(u, CstrMsg) else map_item(u, th.normalize) for u in items
    )


def canonical_items(items) -> tuple:
    ren = canonical_renaming([t for u in items for t in u.terms()], stem="_c")
    return subst_items(items, ren)


def same_items_up_to_renaming(a, b) -> bool:
    return canonical_items(a) == canonical_items(b)


def constraint_label(u: CstrMsg):
    """The constraint reported in a transition label: the original guard."""
    if u.question:
        return QUESTION
    return u.cstr if u.num == 1 else u.cstr.negate()


def is_eq(c) -> bool:
    return isinstance(c, Constraint) and c.kind == EQ
