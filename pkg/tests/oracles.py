"""Brute-force oracles over finite ground universes."""

import itertools

from strandweaver.term_kernel import App, Var, apply, term_key, variables


def ground_terms(sig, ops, consts, depth):
    """Ground terms over ``ops`` and ``consts`` up to ``depth``, as (term, least sort)."""
    level = [(App(c, []), sig.sort_of(App(c, []))) for c in consts]
    out = list(level)
    for _ in range(depth - 1):
        nxt = []
        for op in ops:
            for decl in sig.ops[op]:
                pools = [[t for t, s in out if sig.leq(s, a)] for a in decl.args]
                for args in itertools.product(*pools):
                    t = App(op, list(args))
                    if all(t != u for u, _ in out) and all(t != u for u, _ in nxt):
                        nxt.append((t, sig.sort_of(t)))
        out.extend(nxt)
    return out


def universe(th, ops, consts, depth):
    """Distinct normal forms by sort: sort -> sorted list of ground terms."""
    sig = th.sig
    nfs = {}
    for t, _ in ground_terms(sig, ops, consts, depth):
        n = th.normalize(t)
        nfs[term_key(n)] = n
    terms = sorted(nfs.values(), key=term_key)
    return {s: [t for t in terms if sig.leq(sig.sort_of(t), s)] for s in sorted(sig.sorts)}


def groundings(vs, uni):
    vs = sorted(vs, key=term_key)
    for combo in itertools.product(*[uni[v.sort] for v in vs]):
        yield dict(zip(vs, combo))


def check_unifiers(th, t1, t2, unifiers, uni):
    """(unsound, missing): solutions violated by a unifier / not covered by any."""
    nf = th.normalize
    unsound, missing = [], []
    for s in unifiers:
        rng = set()
        for x in variables(t1) | variables(t2):
            rng |= variables(apply(x, s))
        for d in groundings(rng, uni):
            if nf(apply(apply(t1, s), d)) != nf(apply(apply(t2, s), d)):
                unsound.append((s, d))
                break
    vs = variables(t1) | variables(t2)
    for g in groundings(vs, uni):
        if nf(apply(t1, g)) != nf(apply(t2, g)):
            continue
        if not any(_subsumes(th, s, g, vs, uni) for s in unifiers):
            missing.append(g)
    return unsound, missing


def _subsumes(th, s, g, vs, uni) -> bool:
    rng = set()
    for x in vs:
        rng |= variables(apply(x, s))
    for d in groundings(rng, uni):
        if all(th.normalize(apply(apply(x, s), d)) == g[x] for x in vs):
            return True
    return False


def oracle_terms(sig, nonce_leaves, item_leaves, com_vars, data_vars):
    """Terms to depth 3 over com/open with the given leaves."""
    coms = list(com_vars) + [App("com", [n, i]) for n in nonce_leaves for i in item_leaves]
    datas = list(data_vars) + list(item_leaves) + [App("open", [n, c]) for n in nonce_leaves for c in coms]
    return list(nonce_leaves) + coms + datas


def is_var(t) -> bool:
    return t.__class__ is Var
