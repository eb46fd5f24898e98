"""Order-sorted terms, substitutions, matching, unification and rewriting.

Terms are immutable and hashable.  A substitution is a plain ``dict`` from
``Var`` to term; every function here keeps substitutions idempotent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

FRESH = "Fresh"
MSG = "Msg"

KINDS = ("fresh", "choice", "pattern", "plain")


class TermError(Exception):
    pass


class IllSorted(TermError):
    pass


class UnknownOperator(TermError):
    pass


class StepBudgetExceeded(TermError):
    pass


class NonFreshVariable(TermError):
    pass


class EmptySort(TermError):
    pass


class Var:
    """A variable.  Identity is (name, sort); ``kind`` is an annotation."""

    __slots__ = ("name", "sort", "kind", "_hash")

    def __init__(self, name: str, sort: str = MSG, kind: str = "plain"):
        if kind not in KINDS:
            raise ValueError(f"unknown variable kind {kind!r}")
        if kind == "fresh" and sort != FRESH:
            raise IllSorted(f"fresh variable {name} must have sort {FRESH}")
        if kind in ("choice", "pattern") and sort == FRESH:
            raise IllSorted(f"{kind} variable {name} cannot have sort {FRESH}")
        self.name = name
        self.sort = sort
        self.kind = "fresh" if sort == FRESH else kind
        self._hash = hash(("V", name, sort))

    def __eq__(self, other):
        return (
            other.__class__ is Var
            and other.name == self.name
            and other.sort == self.sort
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"{self.name}:{self.sort}"

    def __str__(self):
        return self.name

    def with_kind(self, kind: str) -> "Var":
        return Var(self.name, self.sort, kind)


class App:
    """Operator application; constants are applications with no arguments."""

    __slots__ = ("op", "args", "_hash", "_vars", "_key")

    def __init__(self, op: str, args: Iterable["Term"] = ()):
        self.op = op
        self.args = tuple(args)
        self._hash = hash(("A", op, self.args))
        self._vars = None
        self._key = None

    def __eq__(self, other):
        if self is other:
            return True
        return (
            other.__class__ is App
            and other._hash == self._hash
            and other.op == self.op
            and other.args == self.args
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return render(self)

    __str__ = __repr__


class FreshConst:
    """The unique name ``r.ro.i`` given to fresh variable ``r`` in session i."""

    __slots__ = ("base", "role", "session", "_hash")

    def __init__(self, base: str, role: str, session: int):
        self.base = base
        self.role = role
        self.session = session
        self._hash = hash(("F", base, role, session))

    def __eq__(self, other):
        return (
            other.__class__ is FreshConst
            and other.base == self.base
            and other.role == self.role
            and other.session == self.session
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"{self.base}.{self.role}.{self.session}"

    __str__ = __repr__


Term = Union[Var, App, FreshConst]
Substitution = dict


def const(name: str) -> App:
    return App(name, ())


# ---------------------------------------------------------------- traversal


def variables(t: Term) -> frozenset:
    if t.__class__ is Var:
        return frozenset((t,))
    if t.__class__ is FreshConst:
        return frozenset()
    if t._vars is None:
        acc = set()
        for a in t.args:
            acc |= variables(a)
        t._vars = frozenset(acc)
    return t._vars


def is_ground(t: Term) -> bool:
    return not variables(t)


def subterms(t: Term) -> Iterator[Term]:
    yield t
    if t.__class__ is App:
        for a in t.args:
            yield from subterms(a)


def positions(t: Term, prefix: tuple = ()) -> Iterator[tuple]:
    """Non-variable positions of ``t`` in pre-order."""
    if t.__class__ is Var:
        return
    yield prefix
    if t.__class__ is App:
        for k, a in enumerate(t.args):
            yield from positions(a, prefix + (k,))


def at(t: Term, pos: tuple) -> Term:
    for k in pos:
        t = t.args[k]
    return t


def replace_at(t: Term, pos: tuple, new: Term) -> Term:
    if not pos:
        return new
    k = pos[0]
    args = list(t.args)
    args[k] = replace_at(args[k], pos[1:], new)
    return App(t.op, args)


def term_key(t: Term) -> tuple:
    """Total order used for canonical multiset forms."""
    if t.__class__ is Var:
        return (0, t.name, t.sort)
    if t.__class__ is FreshConst:
        return (1, t.base, t.role, t.session)
    if t._key is None:
        t._key = (2, t.op, len(t.args), tuple(term_key(a) for a in t.args))
    return t._key


def _mixfix(op: str, n: int) -> bool:
    return n > 0 and "_" in op and op.count("_") == n


def render(t: Term) -> str:
    if t.__class__ is not App:
        return str(t)
    op, args = t.op, t.args
    if _mixfix(op, len(args)):
        parts = op.split("_")
        out = []
        last = len(args) - 1
        for k, a in enumerate(args):
            if parts[k]:
                out.append(parts[k])
            s = render(a)
            if a.__class__ is App and _mixfix(a.op, len(a.args)) and not (a.op == op and k == last):
                s = f"({s})"
            out.append(s)
        if parts[-1]:
            out.append(parts[-1])
        return " ".join(out)
    if not args:
        return op
    return f"{op}({', '.join(render(a) for a in args)})"


# ------------------------------------------------------------ substitutions


def apply(t: Term, s: Substitution) -> Term:
    if not s:
        return t
    cls = t.__class__
    if cls is Var:
        return s.get(t, t)
    if cls is FreshConst or not t.args:
        return t
    vs = variables(t)
    if not vs or vs.isdisjoint(s):
        return t
    return App(t.op, [apply(a, s) for a in t.args])


def compose(s1: Substitution, s2: Substitution) -> Substitution:
    """Substitution equal to applying s1 then s2."""
    out = {v: apply(t, s2) for v, t in s1.items()}
    for v, t in s2.items():
        out.setdefault(v, t)
    return {v: t for v, t in out.items() if t != v}


def restrict(s: Substitution, vs: Iterable[Var]) -> Substitution:
    vs = set(vs)
    return {v: t for v, t in s.items() if v in vs}


def is_idempotent(s: Substitution) -> bool:
    rng = set()
    for t in s.values():
        rng |= variables(t)
    return rng.isdisjoint(s.keys())


# ---------------------------------------------------------------- signature


@dataclass(frozen=True)
class OpDecl:
    name: str
    args: tuple
    result: str


@dataclass
class Signature:
    """Sorts with a subsort order and (possibly overloaded) operators."""

    sorts: set = field(default_factory=set)
    supers: dict = field(default_factory=dict)
    ops: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sorts = set(self.sorts) | {MSG, FRESH}
        self._leq = None
        self._sort_cache: dict = {}

    # -- declaration
    def add_sort(self, name: str, supersorts: Iterable[str] = ()):
        self.sorts.add(name)
        self.supers.setdefault(name, set()).update(supersorts)
        self.sorts.update(supersorts)
        self._leq = None

    def add_op(self, name: str, args: Iterable[str], result: str):
        decl = OpDecl(name, tuple(args), result)
        for s in decl.args + (decl.result,):
            if s not in self.sorts:
                raise IllSorted(f"operator {name} uses undeclared sort {s}")
        lst = self.ops.setdefault(name, [])
        if decl not in lst:
            lst.append(decl)
        self._sort_cache.clear()

    # -- subsort order
    def _closure(self):
        if self._leq is None:
            up = {s: set(self.supers.get(s, ())) for s in self.sorts}
            leq = {s: {s} for s in self.sorts}
            changed = True
            for s in self.sorts:
                leq[s] |= up[s]
            while changed:
                changed = False
                for s in self.sorts:
                    extra = set()
                    for t in leq[s]:
                        extra |= leq[t]
                    if not extra <= leq[s]:
                        leq[s] |= extra
                        changed = True
            for s in self.sorts:
                for t in leq[s]:
                    if t != s and s in leq[t]:
                        raise IllSorted(f"subsort cycle between {s} and {t}")
            self._leq = leq
        return self._leq

    def leq(self, s1: str, s2: str) -> bool:
        if s1 == s2:
            return True
        return s2 in self._closure().get(s1, ())

    def lower(self, s: str) -> set:
        return {t for t in self.sorts if self.leq(t, s)}

    def glbs(self, s1: str, s2: str) -> list:
        """Maximal common subsorts."""
        common = self.lower(s1) & self.lower(s2)
        return sorted(c for c in common if not any(c != d and self.leq(c, d) for d in common))

    def constants_of(self, sort: str) -> list:
        out = []
        for name, decls in self.ops.items():
            for d in decls:
                if not d.args and self.leq(d.result, sort):
                    out.append(App(name))
                    break
        return sorted(out, key=term_key)

    # -- sorts of terms
    def sort_of(self, t: Term) -> str:
        cls = t.__class__
        if cls is Var:
            return t.sort
        if cls is FreshConst:
            return FRESH
        hit = self._sort_cache.get(t)
        if hit is not None:
            return hit
        decls = self.ops.get(t.op)
        if decls is None:
            raise UnknownOperator(t.op)
        argsorts = [self.sort_of(a) for a in t.args]
        best = None
        for d in decls:
            if len(d.args) == len(argsorts) and all(
                self.leq(a, b) for a, b in zip(argsorts, d.args)
            ):
                if best is None or self.leq(d.result, best):
                    best = d.result
        if best is None:
            raise IllSorted(
                f"{render(t)}: no declaration of {t.op} accepts "
                f"({', '.join(argsorts)})"
            )
        self._sort_cache[t] = best
        return best

    def well_sorted(self, t: Term) -> bool:
        try:
            self.sort_of(t)
            return True
        except TermError:
            return False

    # -- inhabitation
    def inhabited(self) -> dict:
        """Map each inhabited sort to a witness ground term."""
        wit: dict = {FRESH: FreshConst("r", "witness", 0)}
        changed = True
        while changed:
            changed = False
            for name, decls in sorted(self.ops.items()):
                for d in decls:
                    if all(any(self.leq(w, a) for w in wit) for a in d.args):
                        args = []
                        for a in d.args:
                            cands = sorted((w for w in wit if self.leq(w, a)), key=str)
                            args.append(wit[cands[0]])
                        t = App(name, args)
                        for s in self.sorts:
                            if self.leq(d.result, s) and s not in wit:
                                wit[s] = t
                                changed = True
        return wit

    def check_nonempty(self):
        wit = self.inhabited()
        empty = sorted(s for s in self.sorts if s not in wit)
        if empty:
            raise EmptySort(f"sorts without ground terms: {', '.join(empty)}")

    def finite_sort(self, sort: str):
        """Ground terms of ``sort`` if they are exactly a finite set of constants."""
        if self.leq(FRESH, sort):
            return None
        for decls in self.ops.values():
            for d in decls:
                if d.args and self.leq(d.result, sort):
                    return None
        return self.constants_of(sort)


# ----------------------------------------------------------------- matching


def match(pattern: Term, target: Term, sig: Signature | None = None,
          sigma: Substitution | None = None) -> Substitution | None:
    """Syntactic matching; target variables are treated as constants."""
    s = {} if sigma is None else dict(sigma)
    stack = [(pattern, target)]
    while stack:
        p, t = stack.pop()
        cls = p.__class__
        if cls is Var:
            bound = s.get(p)
            if bound is None:
                if sig is not None and not sig.leq(sig.sort_of(t), p.sort):
                    return None
                s[p] = t
            elif bound != t:
                return None
        elif cls is FreshConst:
            if p != t:
                return None
        else:
            if t.__class__ is not App or t.op != p.op or len(t.args) != len(p.args):
                return None
            stack.extend(zip(p.args, t.args))
    return s


# -------------------------------------------------------------- unification


_counter = itertools.count()


def fresh_var(sort: str, stem: str = "_u") -> Var:
    return Var(f"{stem}{next(_counter)}", sort)


def _occurs(v: Var, t: Term, s: Substitution) -> bool:
    stack = [t]
    while stack:
        u = stack.pop()
        if u.__class__ is Var:
            if u == v:
                return True
            b = s.get(u)
            if b is not None:
                stack.append(b)
        elif u.__class__ is App:
            stack.extend(u.args)
    return False


def _walk(t: Term, s: Substitution) -> Term:
    while t.__class__ is Var and t in s:
        t = s[t]
    return t


def _resolve(t: Term, s: Substitution) -> Term:
    t = _walk(t, s)
    if t.__class__ is App and t.args:
        return App(t.op, [_resolve(a, s) for a in t.args])
    return t


def _rigid(v: Var, rigid_fresh: bool) -> bool:
    return rigid_fresh and v.sort == FRESH


def _specialize(t: Term, sort: str, sig: Signature) -> list:
    """Variable specializations making ``t`` have sort <= ``sort``."""
    cls = t.__class__
    if cls is Var:
        if sig.leq(t.sort, sort):
            return [{}]
        if t.sort == FRESH:
            return []
        return [{t: fresh_var(g, t.name + "_")} for g in sig.glbs(t.sort, sort)]
    if cls is FreshConst:
        return [{}] if sig.leq(FRESH, sort) else []
    try:
        if sig.leq(sig.sort_of(t), sort):
            return [{}]
    except TermError:
        pass
    out = []
    for d in sig.ops.get(t.op, ()):
        if len(d.args) != len(t.args) or not sig.leq(d.result, sort):
            continue
        partial = [{}]
        for a, asort in zip(t.args, d.args):
            nxt = []
            for s in partial:
                for s2 in _specialize(apply(a, s), asort, sig):
                    nxt.append(compose(s, s2))
            partial = nxt
            if not partial:
                break
        out.extend(partial)
    return out


def unify_all(t1: Term, t2: Term, sig: Signature | None = None,
              sigma: Substitution | None = None,
              rigid_fresh: bool = False) -> list:
    """Complete set of order-sorted syntactic unifiers (usually 0 or 1)."""
    results = []
    _unify_rec([(t1, t2)], dict(sigma or {}), sig, rigid_fresh, results)
    out = []
    seen = set()
    for s in results:
        s = {v: _resolve(t, s) for v, t in s.items()}
        s = {v: t for v, t in s.items() if t != v}
        key = frozenset(s.items())
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def unify(t1: Term, t2: Term, sig: Signature | None = None,
          rigid_fresh: bool = False) -> Substitution | None:
    res = unify_all(t1, t2, sig, rigid_fresh=rigid_fresh)
    return res[0] if res else None


def _bind(v: Var, t: Term, s: Substitution, sig, rigid_fresh):
    """Extensions of s binding v to t; list of substitutions."""
    if _occurs(v, t, s):
        return []
    if sig is None:
        s2 = dict(s)
        s2[v] = t
        return [s2]
    rt = _resolve(t, s)
    out = []
    for spec in _specialize(rt, v.sort, sig):
        if any(_rigid(x, rigid_fresh) for x in spec):
            continue
        s2 = dict(s)
        for x, y in spec.items():
            s2[x] = y
        s2[v] = apply(rt, spec)
        out.append(s2)
    return out


def _unify_rec(eqs, s, sig, rigid_fresh, results):
    while eqs:
        a, b = eqs.pop()
        a = _walk(a, s)
        b = _walk(b, s)
        if a == b:
            continue
        if a.__class__ is not Var and b.__class__ is Var:
            a, b = b, a
        if a.__class__ is Var:
            if b.__class__ is Var:
                ra, rb = _rigid(a, rigid_fresh), _rigid(b, rigid_fresh)
                if ra and rb:
                    return
                if ra:
                    a, b = b, a
                elif not rb and sig is not None and not sig.leq(b.sort, a.sort):
                    if sig.leq(a.sort, b.sort):
                        a, b = b, a
                    else:
                        for g in sig.glbs(a.sort, b.sort):
                            z = fresh_var(g, "_g")
                            s2 = dict(s)
                            s2[a] = z
                            s2[b] = z
                            _unify_rec(list(eqs), s2, sig, rigid_fresh, results)
                        return
            elif _rigid(a, rigid_fresh):
                return
            options = _bind(a, b, s, sig, rigid_fresh)
            if not options:
                return
            if len(options) == 1:
                s = options[0]
                continue
            for s2 in options:
                _unify_rec(list(eqs), s2, sig, rigid_fresh, results)
            return
        if a.__class__ is FreshConst or b.__class__ is FreshConst:
            return
        if a.op != b.op or len(a.args) != len(b.args):
            return
        eqs.extend(zip(a.args, b.args))
    results.append(s)


# ------------------------------------------------------- rewriting theories


@dataclass(frozen=True)
class Rule:
    lhs: App
    rhs: Term

    def __post_init__(self):
        if self.lhs.__class__ is not App:
            raise TermError("rule left-hand side must not be a variable")
        if not variables(self.rhs) <= variables(self.lhs):
            raise TermError(f"rule {render(self.lhs)} -> {render(self.rhs)} introduces variables")


class ConvergentTheory:
    """Oriented equations E_P, assumed terminating and confluent."""

    def __init__(self, rules: Iterable[Rule] = (), sig: Signature | None = None,
                 step_budget: int = 10_000, variant_bound: int = 64):
        self.rules = tuple(rules)
        self.sig = sig
        self.step_budget = step_budget
        self.variant_bound = variant_bound
        self._nf: dict = {}
        self._heads = {r.lhs.op for r in self.rules}
        self._variant_cache: dict = {}

    @property
    def empty(self) -> bool:
        return not self.rules

    # -- normalization (innermost)
    def normalize(self, t: Term) -> Term:
        if not self.rules:
            return t
        budget = [self.step_budget]
        return self._norm(t, budget)

    def _norm(self, t: Term, budget) -> Term:
        if t.__class__ is not App or (not t.args and t.op not in self._heads):
            return t
        hit = self._nf.get(t)
        if hit is not None:
            return hit
        u = App(t.op, [self._norm(a, budget) for a in t.args]) if t.args else t
        if u.op in self._heads:
            for r in self.rules:
                if r.lhs.op != u.op:
                    continue
                s = match(r.lhs, u, self.sig)
                if s is not None:
                    budget[0] -= 1
                    if budget[0] < 0:
                        raise StepBudgetExceeded(render(t))
                    u = self._norm(apply(r.rhs, s), budget)
                    break
        self._nf[t] = u
        return u

    def mentions_defined(self, t: Term) -> bool:
        return any(u.__class__ is App and u.op in self._heads for u in subterms(t))

    def is_normal(self, t: Term) -> bool:
        return self.normalize(t) == t

    def equal(self, t1: Term, t2: Term) -> bool:
        return self.normalize(t1) == self.normalize(t2)

    # -- variants
    def _renamed_rules(self):
        for r in self.rules:
            ren = {v: fresh_var(v.sort, "_r") for v in variables(r.lhs)}
            yield apply(r.lhs, ren), apply(r.rhs, ren)

    def variants(self, t: Term, bound: int | None = None,
                 rigid_fresh: bool = False):
        """Narrowing variants (theta, normal form) of t; flag if truncated."""
        bound = self.variant_bound if bound is None else bound
        key = (t, bound, rigid_fresh)
        hit = self._variant_cache.get(key)
        if hit is not None:
            return hit
        tv = variables(t)
        start = ({}, self.normalize(t))
        out = [start]
        seen = {_variant_key(start, tv)}
        frontier = [start]
        steps = 0
        truncated = False
        while frontier and self.rules:
            if steps >= bound:
                truncated = True
                break
            steps += 1
            nxt = []
            for theta, u in frontier:
                for pos in positions(u):
                    sub = at(u, pos)
                    if sub.__class__ is not App or sub.op not in self._heads:
                        continue
                    for lhs, rhs in self._renamed_rules():
                        for mu in unify_all(sub, lhs, self.sig, rigid_fresh=rigid_fresh):
                            u2 = self.normalize(apply(replace_at(u, pos, rhs), mu))
                            th2 = restrict(compose(theta, mu), tv)
                            th2 = {v: self.normalize(x) for v, x in th2.items()}
                            cand = (th2, u2)
                            k = _variant_key(cand, tv)
                            if k not in seen:
                                seen.add(k)
                                out.append(cand)
                                nxt.append(cand)
            frontier = nxt
        res = (out, truncated)
        self._variant_cache[key] = res
        return res

    def variant_unify(self, t1: Term, t2: Term, bound: int | None = None,
                      rigid_fresh: bool = False) -> "UnifierSet":
        v1, tr1 = self.variants(t1, bound, rigid_fresh)
        v2, tr2 = self.variants(t2, bound, rigid_fresh)
        tv = variables(t1) | variables(t2)
        found = []
        keys = set()
        for th1, u1 in v1:
            for th2, u2 in v2:
                for s in unify_all(u1, u2, self.sig, rigid_fresh=rigid_fresh):
                    for s12 in _merge(th1, th2, s, self.sig, rigid_fresh):
                        s12 = {v: self.normalize(x) for v, x in s12.items() if v in tv}
                        if self.normalize(apply(t1, s12)) != self.normalize(apply(t2, s12)):
                            continue
                        k = frozenset(s12.items())
                        if k not in keys:
                            keys.add(k)
                            found.append(s12)
        return UnifierSet(found, tr1 or tr2)

    def match_modulo(self, pattern: Term, ground: Term, bound: int | None = None) -> "UnifierSet":
        if not is_ground(ground):
            raise TermError("match_modulo expects a ground target")
        g = self.normalize(ground)
        if not self.rules or not self.mentions_defined(pattern):
            # no defined symbol in the pattern: its instances by normal forms are normal
            s = match(pattern, g, self.sig)
            return UnifierSet([] if s is None else [s], False)
        res = self.variant_unify(pattern, g, bound)
        pv = variables(pattern)
        out = []
        keys = set()
        for s in res:
            s = restrict(s, pv)
            if all(is_ground(x) for x in s.values()) and set(s) == set(pv):
                k = frozenset(s.items())
                if k not in keys:
                    keys.add(k)
                    out.append(s)
        return UnifierSet(out, res.bound_exhausted)


class UnifierSet(list):
    """List of unifiers carrying a truncation flag."""

    def __init__(self, items=(), bound_exhausted: bool = False):
        super().__init__(items)
        self.bound_exhausted = bound_exhausted


def _variant_key(v, tv):
    theta, u = v
    ren = canonical_renaming([u] + [theta.get(x, x) for x in sorted(tv, key=term_key)])
    return (apply(u, ren), tuple(apply(theta.get(x, x), ren) for x in sorted(tv, key=term_key)))


def _merge(th1, th2, s, sig, rigid_fresh):
    """Unifiers of the equations th1 ∪ th2 ∪ s."""
    partial = [dict(s)]
    for th in (th1, th2):
        for v, t in th.items():
            nxt = []
            for p in partial:
                for q in unify_all(apply(v, p), apply(t, p), sig, rigid_fresh=rigid_fresh):
                    nxt.append(compose(p, q))
            partial = nxt
            if not partial:
                return []
    return partial


def canonical_renaming(terms: Iterable[Term], stem: str = "#") -> Substitution:
    """Rename variables by order of first occurrence (pre-order)."""
    ren = {}
    for t in terms:
        for u in subterms(t):
            if u.__class__ is Var and u not in ren:
                ren[u] = Var(f"{stem}{len(ren)}", u.sort)
    return ren


def rename_apart(terms: Iterable[Term], stem: str) -> Substitution:
    vs = set()
    for t in terms:
        vs |= variables(t)
    return {v: fresh_var(v.sort, f"{v.name}{stem}") for v in sorted(vs, key=term_key)}


# -------------------------------------------------------------- fresh names


def fresh_rename(ro: str, i: int, vs: Iterable[Var]) -> Substitution:
    out = {}
    for v in vs:
        if v.__class__ is not Var or v.sort != FRESH:
            raise NonFreshVariable(repr(v))
        out[v] = FreshConst(v.name, ro, i)
    return out
