"""Backwards reachability over symbolic strand states.

A symbolic state is a set of strands with a bar between past and future,
positive intruder facts (``inI``: known at the cut), negative facts
(``nI``: learned strictly later) and a store of disequalities.  Steps undo
the last forward event; a state is initial when every past is empty and no
positive fact remains.

Search explores runs in block normal form.  Events that do not extend the
intruder knowledge (silent sends, receives, constraint checks) commute
with every event of another strand: delaying a receive keeps it enabled
because knowledge only grows.  Any run therefore reorders into blocks, each
a run of one strand's events ending in a learning send, followed by final
blocks of the attack strands in a fixed order.  Backwards, the search picks
a learning send (B++ or B&), then unwinds that strand's block; after a
receive or constraint the next item is forced, and at a send it either
continues silently (B+) or closes the block.  The full step relation is
still available for the one-step lemma tests.
"""

from __future__ import annotations

import hashlib
import itertools
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .forwards_engine import (
    CHOOSE,
    IF,
    RECV,
    SEND_LEARN,
    SEND_SILENT,
    ChoiceDomain,
    FWSemantics,
    FWState,
    FWStrand,
    MissingDomain,
    TransitionLabel,
)
from .proc_algebra import EQ
from .strand_model import (
    CstrMsg,
    RecvMsg,
    SendMsg,
    StrandSpec,
    constraint_label,
    item_vars,
    map_item,
    match_items,
    subst_items,
)
from .term_kernel import (
    FRESH,
    App,
    ConvergentTheory,
    FreshConst,
    Term,
    Var,
    apply,
    canonical_renaming,
    fresh_var,
    is_ground,
    render,
    rename_apart,
    term_key,
    variables,
)

FOUND = "Found"
NOT_FOUND = "NotFoundWithinDepth"
EXHAUSTED = "ExhaustedNoAttack"


class PatternNotStronglyIrreducible(Exception):
    def __init__(self, where: str, term: Term):
        super().__init__(f"{where}: {render(term)} has non-trivial variants")
        self.where = where
        self.term = term


class AttackError(Exception):
    pass


# ------------------------------------------------------------------- states


@dataclass(frozen=True)
class SymbolicStrand:
    uid: int
    role: str
    past: tuple
    future: tuple = ()
    fresh: tuple = ()  # ((Var, base name), ...)

    def __str__(self):
        body = ", ".join(str(u) for u in self.past)
        if self.future:
            body += " | " + ", ".join(str(u) for u in self.future)
        return f"({self.role}) [{body}]"


@dataclass(frozen=True)
class SymbolicState:
    strands: tuple
    pos: tuple = ()
    neg: tuple = ()
    store: tuple = ()  # ((lhs, rhs), ...)
    tracked: tuple = ()  # ((attack var, current term), ...)
    next_uid: int = 0
    focus: tuple = ("free",)  # ("final", uids) | ("block", uid) | ("free",)

    def strand(self, uid: int) -> SymbolicStrand:
        for s in self.strands:
            if s.uid == uid:
                return s
        raise KeyError(uid)

    def vars(self) -> frozenset:
        acc = set()
        for s in self.strands:
            for u in s.past + s.future:
                acc |= item_vars(u)
        for t in self.pos + self.neg:
            acc |= variables(t)
        for a, b in self.store:
            acc |= variables(a) | variables(b)
        for _, t in self.tracked:
            acc |= variables(t)
        return frozenset(acc)

    def is_initial(self) -> bool:
        return not self.pos and all(not s.past for s in self.strands)

    def to_json(self) -> dict:
        return {
            "strands": [str(s) for s in self.strands],
            "inI": [render(t) for t in self.pos],
            "nI": [render(t) for t in self.neg],
            "store": [f"{render(a)} =/= {render(b)}" for a, b in self.store],
        }


def _tsort(ts) -> tuple:
    return tuple(sorted(set(ts), key=term_key))


def _pair(a: Term, b: Term) -> tuple:
    return (a, b) if term_key(a) <= term_key(b) else (b, a)


def _canon_store(pairs) -> tuple:
    return tuple(sorted(set(pairs), key=lambda p: (term_key(p[0]), term_key(p[1]))))


# ---------------------------------------------------------- attack patterns


@dataclass(frozen=True)
class AttackStrand:
    role: str
    items: tuple
    future: Optional[tuple] = None


@dataclass
class AttackPattern:
    ident: str
    strands: tuple
    goals: tuple = ()
    nevers: tuple = ()  # tuple of groups, each a tuple of AttackStrand
    name: str = ""

    def variables(self) -> list:
        acc = set()
        for s in self.strands:
            for u in s.items + (s.future or ()):
                acc |= item_vars(u)
        for g in self.goals:
            acc |= variables(g)
        return sorted(acc, key=term_key)


def _check_irreducible(th: ConvergentTheory, t: Term, where: str):
    if not th.mentions_defined(t):
        return
    vs, _ = th.variants(t, rigid_fresh=True)
    if len(vs) > 1 or th.normalize(t) != t:
        raise PatternNotStronglyIrreducible(where, t)


def _norm_item(u, th):
    return map_item(u, th.normalize)


def _norm_items(items, th) -> tuple:
    return tuple(_norm_item(u, th) for u in items)


def load_attack(attack: AttackPattern, spec: StrandSpec, th: ConvergentTheory) -> SymbolicState:
    """Build the initial symbolic state of an attack pattern."""
    roles = set(spec.roles())
    strands = []
    for k, a in enumerate(attack.strands):
        if a.role not in roles:
            raise AttackError(f"attack {attack.ident}: unknown role {a.role}")
        items = tuple(a.items) + tuple(a.future or ())
        if not any(_shape_compatible(items, s.items) for _, s in spec.by_role(a.role)):
            raise AttackError(
                f"attack {attack.ident}: strand {k + 1} fits no strand of role {a.role}")
        for u in items:
            if isinstance(u, CstrMsg) and not u.question:
                for t in u.terms():
                    _check_irreducible(th, t, f"attack {attack.ident} constraint {u}")
        fresh = sorted((v for v in _items_vars(items) if v.sort == FRESH), key=term_key)
        strands.append(SymbolicStrand(
            k, a.role, _norm_items(a.items, th), (), tuple((v, v.name) for v in fresh)))
    for group in attack.nevers:
        for p in group:
            if p.role not in roles:
                raise AttackError(f"attack {attack.ident}: unknown role {p.role} in never pattern")
            for u in p.items + (p.future or ()):
                for t in u.terms():
                    _check_irreducible(th, t, f"attack {attack.ident} never pattern")
    avars = attack.variables()
    st = SymbolicState(
        tuple(strands), _tsort(th.normalize(g) for g in attack.goals), (), (),
        tuple((v, v) for v in avars), len(strands),
        ("final", tuple(range(len(strands)))) if strands else ("free",))
    return st


def _items_vars(items) -> frozenset:
    acc = set()
    for u in items:
        acc |= item_vars(u)
    return frozenset(acc)


def _shape_compatible(items, spec_items) -> bool:
    if len(items) > len(spec_items):
        return False
    for u, v in zip(items, spec_items):
        if type(u) is not type(v):
            return False
        if isinstance(u, CstrMsg) and (u.num != v.num or u.question != v.question):
            return False
    return True


# ------------------------------------------------------------------ steps


@dataclass(frozen=True)
class Step:
    rule: str
    uid: int
    position: int
    subst: tuple  # sorted (Var, Term) pairs
    state: SymbolicState

    def subst_json(self) -> dict:
        return {repr(v): render(t) for v, t in self.subst}


def _subst_tuple(sigma: dict, keep: Iterable[Var]) -> tuple:
    keep = set(keep)
    return tuple(sorted(((v, t) for v, t in sigma.items() if v in keep), key=lambda p: term_key(p[0])))


class BackwardsEngine:
    """Backwards step relation for one strand specification."""

    def __init__(self, spec: StrandSpec, th: ConvergentTheory, *, nevers: tuple = (),
                 attack_vars: tuple = (), check_diseq_sat: bool = True, lookahead: int = 3,
                 dom: Optional[ChoiceDomain] = None, sat_limit: int = 4096):
        self.spec = spec
        self.th = th
        self.sig = th.sig
        self.check_diseq_sat = check_diseq_sat
        self._sat_cache: dict = {}
        self.lookahead = lookahead
        self.dom = dom
        self.sat_limit = sat_limit
        self.nevers = tuple(tuple(g) for g in nevers)
        self.attack_vars = frozenset(attack_vars)
        self._never_roles = {p.role for g in self.nevers for p in g}
        self.incomplete = False
        self._sends = [
            (idx, k) for idx, s in enumerate(spec.strands)
            for k, u in enumerate(s.items) if isinstance(u, SendMsg)
        ]
        # template copies of each send, renamed once, used to filter candidates
        self._templates = {}
        for idx, k in self._sends:
            msg = spec.strands[idx].items[k].msg
            self._templates[(idx, k)] = apply(msg, rename_apart([msg], f"~t{idx}.{k}."))
        self._shape: dict = {}
        self._finite: dict = {}
        self._ren_counter = itertools.count()

    # -- unification helpers
    def unifiers(self, a: Term, b: Term) -> list:
        th = self.th
        if not th.rules or (not th.mentions_defined(a) and not th.mentions_defined(b)):
            from .term_kernel import unify_all
            return unify_all(a, b, self.sig, rigid_fresh=True)
        res = th.variant_unify(a, b, rigid_fresh=True)
        if res.bound_exhausted:
            self.incomplete = True
        return list(res)

    def finite_values(self, sort: str):
        if sort not in self._finite:
            self._finite[sort] = self.sig.finite_sort(sort) if self.sig is not None else None
        return self._finite[sort]

    # -- state construction
    def instantiate(self, st: SymbolicState, sigma: dict) -> Optional[SymbolicState]:
        """Apply sigma, normalize, and drop states violating the fact invariants."""
        if not sigma:
            return st
        nf = self.th.normalize

        def f(t):
            return nf(apply(t, sigma))

        strands = tuple(
            SymbolicStrand(s.uid, s.role, tuple(map_item(u, f) for u in s.past),
                           tuple(map_item(u, f) for u in s.future), s.fresh)
            for s in st.strands)
        pos = _tsort(f(t) for t in st.pos)
        neg = _tsort(f(t) for t in st.neg)
        if len(neg) != len(st.neg) or set(pos) & set(neg):
            return None
        store = []
        for a, b in st.store:
            a2, b2 = f(a), f(b)
            if a2 == b2:
                return None
            if is_ground(a2) and is_ground(b2):
                continue
            store.append(_pair(a2, b2))
        tracked = tuple((v, f(t)) for v, t in st.tracked)
        return SymbolicState(strands, pos, neg, _canon_store(store), tracked, st.next_uid, st.focus)

    def add_diseq(self, st: SymbolicState, a: Term, b: Term) -> Optional[SymbolicState]:
        a, b = self.th.normalize(a), self.th.normalize(b)
        if a == b:
            return None
        if not self.unifiers(a, b):
            return st
        return replace(st, store=_canon_store(st.store + (_pair(a, b),)))

    def add_pos(self, st: SymbolicState, m: Term) -> Optional[SymbolicState]:
        m = self.th.normalize(m)
        if m in st.neg:
            return None
        if m in st.pos:
            return st
        st = replace(st, pos=_tsort(st.pos + (m,)))
        for n in st.neg:
            st = self.add_diseq(st, m, n)
            if st is None:
                return None
        return st

    def _explain(self, st: SymbolicState, f: Term) -> list:
        """Move fact f to nI and settle the other positive facts against it."""
        pos = tuple(t for t in st.pos if t != f)
        st2 = replace(st, pos=pos, neg=_tsort(st.neg + (f,)))
        for n in st.neg:
            st2 = self.add_diseq(st2, f, n)
            if st2 is None:
                return []
        return self._settle(st2, f)

    def _settle(self, st: SymbolicState, f: Term) -> list:
        for g in st.pos:
            if _pair(g, f) in st.store:
                continue
            taus = self.unifiers(g, f)
            if not taus:
                continue
            out = []
            dis = self.add_diseq(st, g, f)
            if dis is not None:
                out.extend(self._settle(dis, f))
            base = replace(st, pos=tuple(t for t in st.pos if t != g))
            for tau in taus:
                merged = self.instantiate(base, tau)
                if merged is not None:
                    out.extend(self._settle(merged, self.th.normalize(apply(f, tau))))
            return out
        return [st]

    # -- the step relation
    def steps(self, st: SymbolicState, eager: bool = True) -> list:
        """Predecessors; ``eager`` selects the block strategy, else all rules."""
        if eager:
            return self._block_steps(st)
        out: list = []
        for s in st.strands:
            if not s.past:
                continue
            if isinstance(s.past[-1], SendMsg):
                self._undo_send(st, s, out)
            else:
                self._undo_passive(st, s, out)
        for f in st.pos:
            self._new_strand(st, f, out)
        return out

    def _block_steps(self, st: SymbolicState) -> list:
        out: list = []
        if st.focus[0] == "free":
            for s in st.strands:
                if s.past and isinstance(s.past[-1], SendMsg):
                    self._undo_send(st, s, out, silent=False)
            for f in st.pos:
                self._new_strand(st, f, out)
            return [replace(x, state=replace(x.state, focus=("block", x.uid))) for x in out]
        uid = st.focus[1][0] if st.focus[0] == "final" else st.focus[1]
        s = st.strand(uid)
        if s.past and not isinstance(s.past[-1], SendMsg):
            self._undo_passive(st, s, out)
            return out
        if s.past:
            self._undo_send(st, s, out, learned=False)
        return out + self._block_steps(replace(st, focus=self._release(st.focus)))

    @staticmethod
    def _release(focus: tuple) -> tuple:
        if focus[0] == "final" and len(focus[1]) > 1:
            return ("final", focus[1][1:])
        return ("free",)

    def _moved(self, st: SymbolicState, s: SymbolicStrand) -> SymbolicState:
        ns = SymbolicStrand(s.uid, s.role, s.past[:-1], s.past[-1:] + s.future, s.fresh)
        return replace(st, strands=tuple(ns if x.uid == s.uid else x for x in st.strands))

    def _undo_passive(self, st, s, out):
        u = s.past[-1]
        pos = len(s.past) - 1
        base = self._moved(st, s)
        if isinstance(u, RecvMsg):
            nxt = self.add_pos(base, u.msg)
            if nxt is not None and self._sat(nxt):
                out.append(Step("B-", s.uid, pos, (), nxt))
        elif u.question:
            out.append(Step("B?", s.uid, pos, (), base))
        elif u.cstr.kind == EQ:
            for sigma in self.unifiers(u.cstr.lhs, u.cstr.rhs):
                nxt = self.instantiate(base, sigma)
                if nxt is not None and self._sat(nxt):
                    out.append(Step("Bif=", s.uid, pos, _subst_tuple(sigma, st.vars()), nxt))
        else:
            a, b = self.th.normalize(u.cstr.lhs), self.th.normalize(u.cstr.rhs)
            if self.check_diseq_sat:
                nxt = self.add_diseq(base, a, b)
                if nxt is not None and not self._sat(nxt):
                    nxt = None
            else:
                nxt = replace(base, store=_canon_store(base.store + (_pair(a, b),)))
            if nxt is not None:
                out.append(Step("Bif!=", s.uid, pos, (), nxt))

    def _undo_send(self, st, s, out, silent: bool = True, learned: bool = True):
        m = s.past[-1].msg
        pos = len(s.past) - 1
        base = self._moved(st, s)
        if silent:
            out.append(Step("B+", s.uid, pos, (), base))
        if not learned:
            return
        keep = st.vars()
        for f in st.pos:
            for sigma in self.unifiers(m, f):
                inst = self.instantiate(base, sigma)
                if inst is None:
                    continue
                f2 = self.th.normalize(apply(f, sigma))
                if f2 not in inst.pos:
                    continue
                for nxt in self._explain(inst, f2):
                    if self._sat(nxt):
                        out.append(Step("B++", s.uid, pos, _subst_tuple(sigma, keep), nxt))

    def fresh_instance(self, idx: int):
        """Spec strand idx with all variables renamed apart."""
        items = self.spec.strands[idx].items
        ren = rename_apart([t for u in items for t in u.terms()], f"~{next(self._ren_counter)}")
        fresh = tuple(sorted(((w, v.name) for v, w in ren.items() if v.sort == FRESH),
                             key=lambda p: term_key(p[0])))
        return subst_items(items, ren), fresh

    def candidates(self, f: Term):
        """Spec send positions whose message may unify with f."""
        for idx, k in self._sends:
            tpl = self._templates[(idx, k)]
            if tpl.__class__ is App and f.__class__ is App and tpl.op != f.op \
                    and tpl.op not in self.th._heads and f.op not in self.th._heads:
                continue
            if self.unifiers(tpl, f):
                yield idx, k

    def _new_strand(self, st, f, out):
        keep = st.vars()
        for idx, k in self.candidates(f):
            sp = self.spec.strands[idx]
            items, fresh = self.fresh_instance(idx)
            for sigma in self.unifiers(items[k].msg, f):
                content = items[: k + 1]
                vs = _items_vars(content)
                ns = SymbolicStrand(st.next_uid, sp.role, items[:k], items[k:k + 1],
                                    tuple(p for p in fresh if p[0] in vs))
                grown = replace(st, strands=st.strands + (ns,), next_uid=st.next_uid + 1)
                inst = self.instantiate(grown, sigma)
                if inst is None:
                    continue
                f2 = self.th.normalize(apply(f, sigma))
                if f2 not in inst.pos:
                    continue
                for nxt in self._explain(inst, f2):
                    if self._sat(nxt):
                        out.append(Step("B&", ns.uid, k, _subst_tuple(sigma, keep), nxt))

    # -- disequality store
    def _sat(self, st: SymbolicState) -> bool:
        if not st.store:
            return True
        hit = self._sat_cache.get(st.store)
        if hit is None:
            hit = self._sat_cache[st.store] = self.store_sat(st.store)
        return hit

    def store_sat(self, store) -> bool:
        nf = self.th.normalize
        for a, b in store:
            if nf(a) == nf(b):
                return False
        fin = []
        for a, b in store:
            for v in sorted(variables(a) | variables(b), key=term_key):
                if v not in fin and self.finite_values(v.sort) is not None:
                    fin.append(v)
        if not fin:
            return True
        pools = [self.finite_values(v.sort) for v in fin]
        if any(not p for p in pools):
            return False
        for n, combo in enumerate(itertools.product(*pools)):
            if n >= self.sat_limit:
                return True
            theta = dict(zip(fin, combo))
            if all(nf(apply(a, theta)) != nf(apply(b, theta)) for a, b in store):
                return True
        return False

    # -- pruning
    def pruned(self, st: SymbolicState) -> Optional[str]:
        if not self._sat(st):
            return "store"
        if self.nevers and self.never_matches(st):
            return "never"
        # receives still in some past will become positive facts
        pending = []
        for s in st.strands:
            for u in s.past:
                if isinstance(u, RecvMsg):
                    if u.msg in st.neg:
                        return "learned-late"
                    pending.append(u.msg)
        if self.lookahead > 0:
            for f in list(st.pos) + pending:
                if not self.explainable(st, f, self.lookahead, ()):
                    return "unexplainable"
        return None

    def never_matches(self, st: SymbolicState) -> bool:
        tracked = dict(st.tracked)
        for group in self.nevers:
            pats = []
            for p in group:
                items = p.items + (p.future or ())
                local = _items_vars(items) - self.attack_vars
                sub = dict(tracked)
                for v in local:
                    sub[v] = Var(f"?{v.name}", v.sort)
                pats.append((p.role, _norm_items(subst_items(items, sub), self.th)))
            if self._never_assign(pats, st.strands, 0, {}, set()):
                return True
        return False

    def _never_assign(self, pats, strands, i, sigma, used) -> bool:
        if i == len(pats):
            return True
        role, items = pats[i]
        for s in strands:
            if s.uid in used or s.role != role:
                continue
            content = s.past + s.future
            if len(content) < len(items):
                continue
            sig2 = _match_items_rigid(items, content[: len(items)], sigma)
            if sig2 is not None and self._never_assign(pats, strands, i + 1, sig2, used | {s.uid}):
                return True
        return False

    def explainable(self, st: SymbolicState, f: Term, depth: int, ancestors: tuple) -> bool:
        """Conservative check that some chain of strands could produce f."""
        if depth <= 0:
            return True
        if f.__class__ is Var:
            return True
        for s in st.strands:
            for u in s.past:
                if isinstance(u, SendMsg) and self.unifiers(u.msg, f):
                    return True
        blocked = set(ancestors) | set(st.neg) | {f}
        for idx, k in self.candidates(f):
            items, _ = self.fresh_instance(idx)
            for sigma in self.unifiers(items[k].msg, f):
                ok = True
                for u in items[:k]:
                    if not isinstance(u, RecvMsg):
                        continue
                    g = self.th.normalize(apply(u.msg, sigma))
                    if g in blocked or not self.explainable(st, g, depth - 1, ancestors + (f,)):
                        ok = False
                        break
                if ok:
                    return True
        return False

    # -- canonical form
    def shape(self, t: Term):
        """term_key with variables reduced to their sorts."""
        hit = self._shape.get(t)
        if hit is None:
            if t.__class__ is Var:
                hit = (0, t.sort)
            elif t.__class__ is FreshConst:
                hit = term_key(t)
            else:
                hit = (2, t.op, tuple(self.shape(a) for a in t.args))
            self._shape[t] = hit
        return hit

    def _item_shape(self, u):
        if isinstance(u, CstrMsg):
            if u.question:
                return (2, u.num)
            return (3, u.num, u.cstr.kind, self.shape(u.cstr.lhs), self.shape(u.cstr.rhs))
        return (0 if isinstance(u, SendMsg) else 1, self.shape(u.msg))

    def canonical_key(self, st: SymbolicState):
        """Key identifying states up to variable renaming (sound, not always maximal)."""
        focus = st.focus[1] if st.focus[0] == "final" else st.focus[1:]
        # finished strands only matter to never patterns
        strands = sorted((s for s in st.strands
                          if s.past or s.role in self._never_roles or s.uid in focus), key=lambda s: (
            s.role, len(s.past), tuple(self._item_shape(u) for u in s.past + s.future),
            tuple(b for _, b in s.fresh)))
        index = {s.uid: k for k, s in enumerate(strands)}
        pos = sorted(st.pos, key=self.shape)
        neg = sorted(st.neg, key=self.shape)
        store = sorted(st.store, key=lambda p: (self.shape(p[0]), self.shape(p[1])))
        order = [t for _, t in st.tracked]
        for s in strands:
            order.extend(w for w, _ in s.fresh)
            order.extend(t for u in s.past + s.future for t in u.terms())
        order.extend(pos)
        order.extend(neg)
        for a, b in store:
            order.extend((a, b))
        ren = canonical_renaming(order)
        return (
            tuple(apply(t, ren) for _, t in st.tracked),
            tuple((s.role, subst_items(s.past, ren), subst_items(s.future, ren),
                   tuple((apply(w, ren), b) for w, b in s.fresh)) for s in strands),
            tuple(sorted((apply(t, ren) for t in pos), key=term_key)),
            tuple(sorted((apply(t, ren) for t in neg), key=term_key)),
            tuple(sorted((_pair(apply(a, ren), apply(b, ren)) for a, b in store),
                         key=lambda p: (term_key(p[0]), term_key(p[1])))),
            (st.focus[0], tuple(index[u] for u in focus)),
        )

    def digest(self, st: SymbolicState) -> str:
        return hashlib.sha256(repr(self.canonical_key(st)).encode()).hexdigest()[:16]


def _match_rigid(p: Term, t: Term, sigma: dict) -> Optional[dict]:
    """Match where only variables named ``?x`` bind; other variables are constants."""
    stack = [(p, t)]
    s = dict(sigma)
    while stack:
        a, b = stack.pop()
        if a.__class__ is Var and a.name.startswith("?"):
            bound = s.get(a)
            if bound is None:
                s[a] = b
            elif bound != b:
                return None
        elif a.__class__ is App:
            if b.__class__ is not App or a.op != b.op or len(a.args) != len(b.args):
                return None
            stack.extend(zip(a.args, b.args))
        elif a != b:
            return None
    return s


def _match_items_rigid(pats, items, sigma) -> Optional[dict]:
    for u, v in zip(pats, items):
        if type(u) is not type(v):
            return None
        if isinstance(u, CstrMsg):
            if u.num != v.num or u.question != v.question:
                return None
            if u.question:
                continue
            if u.cstr.kind != v.cstr.kind:
                return None
        for a, b in zip(u.terms(), v.terms()):
            sigma = _match_rigid(a, b, sigma)
            if sigma is None:
                return None
    return sigma


def backwards_step(state: SymbolicState, spec: StrandSpec, th: ConvergentTheory,
                   eager: bool = False, **kw) -> list:
    """All (rule, substitution, predecessor) triples of a symbolic state."""
    eng = BackwardsEngine(spec, th, **kw)
    return [(s.rule, dict(s.subst), s.state) for s in eng.steps(state, eager=eager)]


# ------------------------------------------------------------------ search


@dataclass
class PathStep:
    rule: str
    role: str
    uid: int
    position: int
    subst: dict
    digest: str

    def to_json(self) -> dict:
        return {"rule": self.rule, "role": self.role, "strand": self.uid,
                "position": self.position, "substitution": self.subst, "state": self.digest}


@dataclass
class SearchResult:
    verdict: str
    depth: int
    states: int
    path: list = field(default_factory=list)
    states_on_path: list = field(default_factory=list)
    found: list = field(default_factory=list)
    pruned: dict = field(default_factory=dict)
    incomplete: bool = False
    truncated: bool = False

    @property
    def attack_state(self) -> Optional[SymbolicState]:
        return self.states_on_path[0] if self.states_on_path else None

    @property
    def initial_state(self) -> Optional[SymbolicState]:
        return self.states_on_path[-1] if self.states_on_path else None


@dataclass
class SearchConfig:
    depth: int = 12
    lookahead: int = 3
    check_diseq_sat: bool = True
    eager: bool = True
    all_paths: bool = False
    max_states: Optional[int] = None


def search(attack: AttackPattern, spec: StrandSpec, th: ConvergentTheory,
           config: Optional[SearchConfig] = None, dom: Optional[ChoiceDomain] = None) -> SearchResult:
    """Breadth-first backwards search from the attack state."""
    cfg = config or SearchConfig()
    init = load_attack(attack, spec, th)
    eng = BackwardsEngine(
        spec, th, nevers=attack.nevers, attack_vars=attack.variables(),
        check_diseq_sat=cfg.check_diseq_sat, lookahead=cfg.lookahead, dom=dom)
    pruned: dict = {}
    why = eng.pruned(init)
    if why is not None:
        pruned[why] = 1
        return SearchResult(EXHAUSTED, 0, 1, pruned=pruned)
    parents: dict = {}
    k0 = eng.canonical_key(init)
    parents[k0] = (None, None, init)
    frontier = [k0]
    found = []
    depth = 0
    truncated = False
    while True:
        for k in frontier:
            st = parents[k][2]
            if st.is_initial():
                found.append(k)
                if not cfg.all_paths:
                    return _result(FOUND, depth, parents, k, eng, pruned, found)
        if depth >= cfg.depth or not frontier:
            break
        nxt = []
        for k in frontier:
            st = parents[k][2]
            if st.is_initial():
                continue
            for step in eng.steps(st, eager=cfg.eager):
                why = eng.pruned(step.state)
                if why is not None:
                    pruned[why] = pruned.get(why, 0) + 1
                    continue
                k2 = eng.canonical_key(step.state)
                if k2 in parents:
                    continue
                parents[k2] = (k, step, step.state)
                nxt.append(k2)
                if cfg.max_states is not None and len(parents) >= cfg.max_states:
                    truncated = True
                    break
            if truncated:
                break
        if truncated:
            break
        frontier = nxt
        if frontier:
            depth += 1
    if found:
        return _result(FOUND, depth, parents, found[0], eng, pruned, found)
    verdict = EXHAUSTED if not frontier and not truncated and not eng.incomplete else NOT_FOUND
    return SearchResult(verdict, depth, len(parents), pruned=pruned,
                        incomplete=eng.incomplete, truncated=truncated)


def _result(verdict, depth, parents, k, eng, pruned, found) -> SearchResult:
    path, states = [], []
    cur = k
    chain = []
    while cur is not None:
        parent, step, st = parents[cur]
        chain.append((step, st))
        cur = parent
    chain.reverse()  # attack state first
    for step, st in chain:
        states.append(st)
        if step is not None:
            path.append(PathStep(step.rule, st.strand(step.uid).role, step.uid, step.position,
                                 step.subst_json(), eng.digest(st)))
    return SearchResult(verdict, depth, len(parents), path, states,
                        [parents[f][2] for f in found], pruned, eng.incomplete)


# ----------------------------------------------------------------- grounding


def var_pool(v: Var, th: ConvergentTheory, dom: Optional[ChoiceDomain]) -> list:
    fin = th.sig.finite_sort(v.sort) if th.sig is not None else None
    if fin is not None:
        return fin
    if dom is not None:
        try:
            return dom.for_var(v)
        except MissingDomain:
            pass
    wit = th.sig.inhabited()
    return [wit[v.sort]] if v.sort in wit else []


def groundings(st: SymbolicState, th: ConvergentTheory, dom: Optional[ChoiceDomain],
               fixed: Optional[dict] = None, limit: int = 100_000):
    """Ground substitutions for the non-fresh variables of st satisfying its store."""
    fixed = dict(fixed or {})
    vs = sorted((v for v in st.vars() if v not in fixed and v.sort != FRESH), key=term_key)
    pools = [var_pool(v, th, dom) for v in vs]
    nf = th.normalize
    for n, combo in enumerate(itertools.product(*pools)):
        if n >= limit:
            return
        theta = {**fixed, **dict(zip(vs, combo))}
        if all(nf(apply(a, theta)) != nf(apply(b, theta)) for a, b in st.store):
            yield theta


def forward_schedule(result: SearchResult, th: ConvergentTheory,
                     dom: Optional[ChoiceDomain] = None) -> Optional[list]:
    """A forward label sequence realising a found path, if it can be grounded."""
    if result.verdict != FOUND or not result.states_on_path:
        return None
    final = result.initial_state
    events = []
    for step, st in zip(result.path, result.states_on_path[1:]):
        events.append((step.rule, step.uid, step.position))
    events.reverse()
    sessions: dict = {}
    counts: dict = {}
    for _, uid, _ in events:
        if uid not in sessions:
            role = final.strand(uid).role
            counts[role] = counts.get(role, 0) + 1
            sessions[uid] = counts[role]
    fixed = {}
    for s in final.strands:
        if s.uid in sessions:
            for w, base in s.fresh:
                fixed[w] = FreshConst(base, s.role, sessions[s.uid])
    if any(v.sort == FRESH and v not in fixed for v in final.vars()):
        return None
    for theta in groundings(final, th, dom, fixed, limit=10_000):
        labels = []
        nf = th.normalize
        for rule, uid, j in events:
            s = final.strand(uid)
            u = s.future[j]
            sess = sessions[uid]
            if isinstance(u, SendMsg):
                m = nf(apply(u.msg, theta))
                kind = SEND_LEARN if rule in ("B++", "B&") else SEND_SILENT
                labels.append(TransitionLabel(s.role, sess, j + 1, kind, m))
            elif isinstance(u, RecvMsg):
                labels.append(TransitionLabel(s.role, sess, j + 1, RECV, nf(apply(u.msg, theta))))
            elif u.question:
                labels.append(TransitionLabel(s.role, sess, j + 1, CHOOSE, "?", u.num))
            else:
                c = u.cstr.subst(theta)
                labels.append(TransitionLabel(s.role, sess, j + 1, IF, constraint_label(CstrMsg(c, u.num)), u.num))
        return labels
    return None


# ------------------------------------------------------------------ lifting


def _ground_items(items, th) -> tuple:
    return tuple(map_item(u, th.normalize) for u in items)


def lift_check(sym: SymbolicState, ground: FWState, theta: dict, th: ConvergentTheory) -> bool:
    """Does sym under theta describe the ground state?"""
    nf = th.normalize
    used = set()
    for s in sym.strands:
        if not s.past:
            continue
        want = tuple(map_item(u, lambda t: nf(apply(t, theta))) for u in s.past)
        hit = None
        for k, g in enumerate(ground.strands):
            if k in used or g.role != s.role or len(g.past) != len(want):
                continue
            if _ground_items(g.past, th) == want:
                hit = k
                break
        if hit is None:
            return False
        used.add(hit)
    ik = {nf(t) for t in ground.ik}
    for f in sym.pos:
        if nf(apply(f, theta)) not in ik:
            return False
    for n in sym.neg:
        t = nf(apply(n, theta))
        if is_ground(t) and t in ik:
            return False
    for a, b in sym.store:
        if nf(apply(a, theta)) == nf(apply(b, theta)):
            return False
    return True


def find_liftings(sym: SymbolicState, ground: FWState, th: ConvergentTheory,
                  first: bool = True) -> list:
    """Substitutions theta under which sym lifts the ground state."""
    strands = [s for s in sym.strands if s.past]
    gstr = list(ground.strands)
    ik = sorted(ground.ik, key=term_key)
    out: list = []

    def facts(i, theta):
        if i == len(sym.pos):
            for theta2 in _close(sym, theta, th):
                if lift_check(sym, ground, theta2, th):
                    out.append(theta2)
                    return first
            return False
        pat = apply(sym.pos[i], theta)
        for g in ik:
            for s in th.match_modulo(pat, g):
                if facts(i + 1, {**theta, **s}):
                    return True
        return False

    def assign(i, theta, used):
        if i == len(strands):
            return facts(0, theta)
        s = strands[i]
        for k, g in enumerate(gstr):
            if k in used or g.role != s.role or len(g.past) != len(s.past):
                continue
            for th2 in match_items(s.past, g.past, th, theta):
                if assign(i + 1, th2, used | {k}):
                    return True
        return False

    assign(0, {}, frozenset())
    return out


def _close(sym: SymbolicState, theta: dict, th: ConvergentTheory):
    """Extend theta over finite-sort leftovers; infinite ones stay generic."""
    left = sorted((v for v in sym.vars() if v not in theta), key=term_key)
    fin = [v for v in left if th.sig is not None and th.sig.finite_sort(v.sort)]
    pools = [th.sig.finite_sort(v.sort) for v in fin]
    for combo in itertools.product(*pools):
        yield {**theta, **dict(zip(fin, combo))}


def attack_state_on_path(result: SearchResult) -> Optional[SymbolicState]:
    """The attack state with the substitution accumulated along the path."""
    if not result.states_on_path:
        return None
    first, last = result.states_on_path[0], result.initial_state
    sigma = {v: t for (v, _), (_, t) in zip(first.tracked, last.tracked) if v != t}
    return _apply_state(first, sigma, None)


def _apply_state(st: SymbolicState, sigma: dict, th) -> SymbolicState:
    def f(t):
        t = apply(t, sigma)
        return th.normalize(t) if th is not None else t

    return SymbolicState(
        tuple(SymbolicStrand(s.uid, s.role, tuple(map_item(u, f) for u in s.past),
                             tuple(map_item(u, f) for u in s.future), s.fresh) for s in st.strands),
        tuple(f(t) for t in st.pos), tuple(f(t) for t in st.neg),
        tuple((f(a), f(b)) for a, b in st.store),
        tuple((v, f(t)) for v, t in st.tracked), st.next_uid)


# ------------------------------------------------------- attack instances


def attack_instances_backward(result: SearchResult, th: ConvergentTheory,
                              dom: Optional[ChoiceDomain]) -> set:
    """Ground attack-variable tuples of every found initial state."""
    out = set()
    for st in result.found:
        for theta in groundings(st, th, dom):
            out.add(tuple(th.normalize(apply(t, theta)) for _, t in st.tracked))
    return out


def attack_instances_forward(attack: AttackPattern, fw: FWSemantics, depth: int) -> set:
    """Attack-variable tuples lifting some forward state within depth."""
    from .forwards_engine import explore

    th = fw.th
    sym = load_attack(attack, fw.spec, th)
    res = explore(fw, depth)
    out = set()
    seen = set()
    avars = [v for v, _ in sym.tracked]
    for trace in res.traces:
        st = _replay(fw, trace)
        if st in seen:
            continue
        seen.add(st)
        for theta in find_liftings(sym, st, th, first=False):
            out.add(tuple(th.normalize(apply(v, theta)) for v in avars))
    return out


def _replay(fw, trace):
    from .forwards_engine import run_trace

    return run_trace(fw, trace)


# ------------------------------------------------------- one-step lemmas


@dataclass
class LemmaCounterexample:
    direction: str
    reason: str
    state: dict
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"direction": self.direction, "reason": self.reason,
                "state": self.state, "detail": self.detail}


@dataclass
class LemmaReport:
    completeness_steps: int
    soundness_steps: int
    counterexamples: list

    @property
    def ok(self) -> bool:
        return not self.counterexamples

    def to_json(self) -> dict:
        return {"completeness_steps": self.completeness_steps,
                "soundness_steps": self.soundness_steps,
                "counterexamples": [c.to_json() for c in self.counterexamples]}


def abstract_state(st: FWState, th: ConvergentTheory, rng: Optional[random.Random] = None,
                   keep: float = 1.0):
    """Full symbolic description of a ground state; returns (state, sessions)."""
    strands, sessions = [], {}
    for k, g in enumerate(st.strands):
        if rng is not None and keep < 1.0 and rng.random() > keep:
            continue
        strands.append(SymbolicStrand(k, g.role, _ground_items(g.past, th)))
        sessions[k] = g.session
    facts = [th.normalize(t) for t in st.ik
             if rng is None or keep >= 1.0 or rng.random() <= keep]
    return SymbolicState(tuple(strands), _tsort(facts), (), (), (), len(st.strands)), sessions


def _finite_constants(st: SymbolicState, th: ConvergentTheory) -> list:
    seen = []
    terms = [t for s in st.strands for u in s.past for t in u.terms()] + list(st.pos)
    for t in terms:
        for u in _subterms(t):
            if u.__class__ is App and not u.args and u not in seen:
                if th.sig.finite_sort(th.sig.sort_of(u)):
                    seen.append(u)
    return seen


def _subterms(t):
    yield t
    if t.__class__ is App:
        for a in t.args:
            yield from _subterms(a)


def _replace_const(t: Term, c: Term, v: Var) -> Term:
    if t == c:
        return v
    if t.__class__ is App and t.args:
        return App(t.op, [_replace_const(a, c, v) for a in t.args])
    return t


def generalize(st: SymbolicState, c: Term, avoid, th: ConvergentTheory):
    """Replace constant c by a variable V, adding V =/= d for each d in avoid."""
    sort = th.sig.sort_of(c)
    v = fresh_var(sort, "G")

    def f(t):
        return _replace_const(t, c, v)

    g = SymbolicState(
        tuple(SymbolicStrand(s.uid, s.role, tuple(map_item(u, f) for u in s.past),
                             tuple(map_item(u, f) for u in s.future), s.fresh) for s in st.strands),
        _tsort(f(t) for t in st.pos), _tsort(f(t) for t in st.neg),
        _canon_store((_pair(f(a), f(b)) for a, b in st.store)), st.tracked, st.next_uid)
    if avoid:
        g = replace(g, store=_canon_store(g.store + tuple(_pair(v, d) for d in avoid)))
    return g, v


def concretize(st: SymbolicState, theta: dict, sessions: dict, fw: FWSemantics) -> Optional[FWState]:
    """The ground state described by st under theta, with candidate bookkeeping."""
    th = fw.th
    nf = th.normalize
    strands = []
    for s in st.strands:
        if not s.past:
            continue
        past = tuple(map_item(u, lambda t: nf(apply(t, theta))) for u in s.past)
        if any(not is_ground(t) for u in past for t in u.terms()):
            return None
        sess = sessions[s.uid]
        cands = []
        for idx, sp in fw.spec.by_role(s.role):
            if len(sp.items) < len(past):
                continue
            items = fw.instance(idx, sess)
            for theta2 in match_items(items[: len(past)], past, th):
                cands.append((idx, theta2))
        if not cands:
            return None
        strands.append(FWStrand(s.role, sess, past, tuple(cands)))
    ik = frozenset(nf(apply(f, theta)) for f in st.pos)
    if any(not is_ground(t) for t in ik):
        return None
    for n in st.neg:
        if nf(apply(n, theta)) in ik:
            return None
    keys = [(s.role, s.session) for s in strands]
    if len(set(keys)) != len(keys):
        return None
    return FWState(tuple(sorted(strands, key=lambda x: (x.role, x.session))), ik)


def _random_walk(fw: FWSemantics, rng: random.Random, depth: int):
    st = fw.initial()
    trace = []
    for _ in range(depth):
        succ = fw.successors(st)
        if not succ:
            break
        # favour running sessions, and their guards most of all, so that
        # sampled states reach deep into strands
        weights = [(6 if lab.kind == IF else 3) if lab.session <= st.max_id(lab.role) else 1
                   for lab, _ in succ]
        lab, nxt = rng.choices(succ, weights)[0]
        trace.append((st, lab, nxt))
        st = nxt
    return trace


def _transition_pools(fw: FWSemantics, depth: int, max_states: int) -> list:
    """Transitions of a bounded breadth-first exploration, grouped by rule kind."""
    init = fw.initial()
    seen = {init}
    frontier = deque([(init, 0)])
    pools: dict = {}
    while frontier:
        st, d = frontier.popleft()
        if d >= depth:
            continue
        for lab, nxt in fw.successors(st):
            pools.setdefault((lab.kind, lab.branch), []).append((st, lab, nxt))
            if nxt not in seen and len(seen) < max_states:
                seen.add(nxt)
                frontier.append((nxt, d + 1))
    return [pools[k] for k in sorted(pools)]


def one_step_lemmas_test(spec: StrandSpec, th: ConvergentTheory, dom: ChoiceDomain,
                         steps: int = 100, depth: int = 8, seed: int = 0,
                         check_diseq_sat: bool = True, max_samples: int = 5000,
                         stop_at_first: bool = True, pool_states: int = 2000) -> LemmaReport:
    """Sample ground transitions and test both one-step lemmas on their abstractions.

    Samples alternate between random walks, which reach deep states, and a
    breadth-first pool visited round-robin by rule kind, so rare rules such
    as the negative branch of a guard are exercised too.
    """
    rng = random.Random(seed)
    fw = FWSemantics(spec, th, dom)
    eng = BackwardsEngine(spec, th, check_diseq_sat=check_diseq_sat, lookahead=0, dom=dom)
    ref = BackwardsEngine(spec, th, lookahead=0, dom=dom)
    pools = _transition_pools(fw, depth, pool_states)
    comp = sound = 0
    cexs: list = []
    samples = 0
    while (comp < steps or sound < steps) and samples < max_samples:
        samples += 1
        if pools and samples % 2 == 0:
            pool = pools[(samples // 2) % len(pools)]
            s, lab, s2 = pool[rng.randrange(len(pool))]
        else:
            walk = _random_walk(fw, rng, rng.randint(1, depth))
            if not walk:
                continue
            s, lab, s2 = walk[-1]
        if comp < steps:
            comp += 1
            cex = _completeness_case(eng, th, s, lab, s2, rng)
            if cex is not None:
                cexs.append(cex)
                if stop_at_first:
                    break
        if sound < steps:
            sound += 1
            cex = _soundness_case(eng, ref, fw, th, dom, s2, rng)
            if cex is not None:
                cexs.append(cex)
                if stop_at_first:
                    break
    return LemmaReport(comp, sound, cexs)


def _completeness_case(eng, th, s, lab, s2, rng):
    S2, _ = abstract_state(s2, th)
    consts = _finite_constants(S2, th)
    if consts and rng.random() < 0.5:
        c = consts[rng.randrange(len(consts))]
        others = [d for d in th.sig.finite_sort(th.sig.sort_of(c)) if d != c]
        S2, _ = generalize(S2, c, [d for d in others if rng.random() < 0.5], th)
    cands = [S2] + [st.state for st in eng.steps(S2, eager=False)]
    for S in cands:
        if find_liftings(S, s, th):
            return None
    return LemmaCounterexample("completeness", "no predecessor lifts the source state",
                               S2.to_json(), {"label": str(lab)})


def _soundness_case(eng, ref, fw, th, dom, s2, rng):
    S2, sessions = abstract_state(s2, th, rng, keep=0.8)
    consts = _finite_constants(S2, th)
    if consts and rng.random() < 0.7:
        # constants of trailing items are the ones the next step inspects,
        # and trailing disequalities are where the store can become unsatisfiable
        tails = [s for s in S2.strands if s.past]
        neq = [s for s in tails if isinstance(s.past[-1], CstrMsg) and not s.past[-1].question
               and s.past[-1].cstr.kind != EQ]
        pool = consts
        for group, p in ((neq, 0.8), (tails, 0.7)):
            bias = [c for s in group for c in _finite_constants(
                SymbolicState((replace(s, past=s.past[-1:]),)), th)]
            if bias and rng.random() < p:
                pool = bias
                break
        c = pool[rng.randrange(len(pool))]
        vals = th.sig.finite_sort(th.sig.sort_of(c))
        if rng.random() < 0.5:
            keep = vals[rng.randrange(len(vals))]
            avoid = [d for d in vals if d != keep]
        else:
            avoid = [d for d in vals if rng.random() < 0.5]
        S2, _ = generalize(S2, c, avoid, th)
        if not ref.store_sat(S2.store):
            return None
    for step in eng.steps(S2, eager=False):
        S = step.state
        if not ref.store_sat(S.store):
            return LemmaCounterexample("soundness", "predecessor store is unsatisfiable",
                                       S2.to_json(), {"rule": step.rule, "predecessor": S.to_json()})
        sess = dict(sessions)
        counts: dict = {}
        for x in fw_strand_roles(S, sessions):
            counts[x[0]] = max(counts.get(x[0], 0), x[1])
        for x in S.strands:
            if x.uid not in sess:
                counts[x.role] = counts.get(x.role, 0) + 1
                sess[x.uid] = counts[x.role]
        fixed = {w: FreshConst(b, x.role, sess[x.uid]) for x in S.strands for w, b in x.fresh}
        sigma = dict(step.subst)
        target = _apply_state(S2, sigma, th)
        witnessed = False
        tried = False
        for theta in groundings(S, th, dom, fixed, limit=64):
            g = concretize(S, theta, sess, fw)
            if g is None:
                continue
            pre, goal, goal_sess = _reopen_sessions(S, target, g, sess)
            if pre is not S:
                g = concretize(pre, theta, goal_sess, fw)
            if g is None or concretize(goal, theta, goal_sess, fw) is None:
                continue
            tried = True
            for _, nxt in fw.successors(g):
                if find_liftings(goal, nxt, th):
                    witnessed = True
                    break
            if witnessed:
                break
        if tried and not witnessed:
            return LemmaCounterexample("soundness", "no forward successor lifts the target",
                                       S2.to_json(), {"rule": step.rule, "predecessor": S.to_json()})
    return None


def _map_fresh(t, ren: dict):
    if t.__class__ is FreshConst:
        return ren.get(t, t)
    if t.__class__ is App and t.args:
        return App(t.op, [_map_fresh(a, ren) for a in t.args])
    return t


def _reopen_sessions(S: SymbolicState, target: SymbolicState, g: FWState, sess: dict):
    """Renumber strands the step removed to the session a forward step would open.

    Fresh names are only meaningful up to renaming, and forward semantics always
    opens the next unused session of a role.
    """
    ren, new_sess = {}, dict(sess)
    for x in S.strands:
        if x.past or x.uid not in sess:
            continue
        nxt = g.max_id(x.role) + 1
        old = sess[x.uid]
        if old == nxt:
            continue
        new_sess[x.uid] = nxt
        for u in target.strand(x.uid).past:
            for t in u.terms():
                for w in _subterms(t):
                    if w.__class__ is FreshConst and w.role == x.role and w.session == old:
                        ren[w] = FreshConst(w.base, x.role, nxt)
    if not ren:
        return S, target, new_sess

    def f(t):
        return _map_fresh(t, ren)

    return (SymbolicState(*_map_state_terms(S, f)), SymbolicState(*_map_state_terms(target, f)),
            new_sess)


def _map_state_terms(st: SymbolicState, f) -> tuple:
    return (tuple(SymbolicStrand(s.uid, s.role, tuple(map_item(u, f) for u in s.past),
                                 tuple(map_item(u, f) for u in s.future), s.fresh) for s in st.strands),
            _tsort(f(t) for t in st.pos), _tsort(f(t) for t in st.neg),
            _canon_store((_pair(f(a), f(b)) for a, b in st.store)), st.tracked, st.next_uid)


def fw_strand_roles(S: SymbolicState, sessions: dict):
    return [(x.role, sessions[x.uid]) for x in S.strands if x.uid in sessions]
