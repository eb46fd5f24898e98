import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strandweaver.term_kernel import (
    FRESH,
    App,
    ConvergentTheory,
    FreshConst,
    IllSorted,
    NonFreshVariable,
    Rule,
    Signature,
    StepBudgetExceeded,
    UnknownOperator,
    Var,
    apply,
    canonical_renaming,
    const,
    fresh_rename,
    is_idempotent,
    match,
    render,
    term_key,
    unify,
    unify_all,
    variables,
)

from oracles import check_unifiers, oracle_terms, universe

# ------------------------------------------------------------- examples


def test_sort_of(commit, T):
    sig = commit.sig
    assert sig.sort_of(T("N")) == "Nonce"
    assert sig.sort_of(T("com(n1, rock)")) == "Com"
    assert sig.sort_of(T("open(N, C)")) == "Data"
    with pytest.raises(IllSorted):
        sig.sort_of(App("com", [T("rock"), T("rock")]))
    with pytest.raises(UnknownOperator):
        sig.sort_of(App("nosuch", []))


def test_subsort_order(commit):
    sig = commit.sig
    assert sig.leq("Item", "Data") and sig.leq("Item", "Msg") and sig.leq("Data", "Data")
    assert not sig.leq("Data", "Item")
    assert not sig.leq("Nonce", "Com")


def test_match_examples(commit, T):
    sig = commit.sig
    assert match(T("pair(N, X)"), T("pair(n1, rock)"), sig) == {T("N"): T("n1"), T("X"): T("rock")}
    assert match(T("pair(N, N)"), T("pair(n1, n2)"), sig) is None
    assert match(T("D"), T("open(n1, com(n2, rock))"), sig) == {T("D"): T("open(n1, com(n2, rock))")}
    # sort violation: a Data term is not a Nonce
    assert match(T("N"), T("rock"), sig) is None


def test_unify_examples(commit, T):
    sig = commit.sig
    s = unify(T("pair(N, X)"), T("pair(M, rock)"), sig)
    assert apply(T("pair(N, X)"), s) == apply(T("pair(M, rock)"), s)
    assert apply(T("X"), s) == T("rock")
    assert unify(T("n1"), T("n2"), sig) is None
    f = Signature()
    f.add_sort("S", ["Msg"])
    f.add_op("f", ["Msg"], "Msg")
    x = Var("x")
    assert unify(x, App("f", [x]), f) is None


def test_unify_order_sorted_meet(commit, T):
    # D : Data against X : Item yields a binding to the smaller sort
    sig = commit.sig
    s = unify(T("D"), T("X"), sig)
    assert s is not None
    assert apply(T("D"), s) == apply(T("X"), s)
    assert sig.sort_of(apply(T("D"), s)) == "Item"


def test_normalize_examples(commit, T):
    th = commit.theory
    assert th.normalize(T("open(n1, com(n1, rock))")) == T("rock")
    assert th.normalize(T("rock")) == T("rock")
    assert th.normalize(T("open(n2, com(n1, rock))")) == T("open(n2, com(n1, rock))")
    assert th.normalize(T("pair(open(n1, com(n1, rock)), n2)")) == T("pair(rock, n2)")


def test_normalize_budget():
    sig = Signature()
    sig.add_op("f", ["Msg"], "Msg")
    sig.add_op("a", [], "Msg")
    x = Var("x")
    th = ConvergentTheory([Rule(App("f", [x]), App("f", [App("f", [x])]))], sig, step_budget=50)
    with pytest.raises(StepBudgetExceeded):
        th.normalize(App("f", [const("a")]))


def test_variant_unify_examples(commit, commit_empty, T):
    th = commit.theory
    us = th.variant_unify(T("open(N, com(n1, rock))"), T("rock"))
    assert {T("N"): T("n1")} in [dict(u) for u in us]
    assert not us.bound_exhausted
    t = T("open(N, C)")
    assert any(all(apply(v, u) == v for v in variables(t)) for u in th.variant_unify(t, t))
    assert list(commit_empty.theory.variant_unify(T("pair(n1, X)"), T("pair(n2, Y)"))) == []
    # no solution: opening with a different nonce never yields the item
    assert list(th.variant_unify(T("open(n2, com(n1, X))"), T("rock"))) == []


def test_match_modulo_examples(commit, commit_empty, T):
    th = commit.theory
    assert list(th.match_modulo(T("open(N, com(n1, rock))"), T("rock"))) == [{T("N"): T("n1")}]
    assert list(th.match_modulo(T("open(N, com(n1, rock))"), T("n1"))) == []
    e = commit_empty.theory
    g = T("open(n1, com(n1, rock))")
    assert list(e.match_modulo(T("open(N, C)"), g)) == [match(T("open(N, C)"), g, commit.sig)]


def test_fresh_rename():
    r1, r2 = Var("r1", FRESH), Var("r2", FRESH)
    s = fresh_rename("Server", 3, {r1, r2})
    assert s == {r1: FreshConst("r1", "Server", 3), r2: FreshConst("r2", "Server", 3)}
    assert render(s[r1]) == "r1.Server.3"
    assert fresh_rename("Server", 3, set()) == {}
    assert set(fresh_rename("S", 1, {r1}).values()).isdisjoint(fresh_rename("S", 2, {r1}).values())
    with pytest.raises(NonFreshVariable):
        fresh_rename("S", 1, {Var("x", "Nonce")})


def test_empty_sort_rejected():
    from strandweaver.spec_cli.parser import ResolutionError, parse_spec

    with pytest.raises(ResolutionError):
        parse_spec("THEORY\n  sorts K\n  op f : K -> K\n")


# ------------------------------------------------ unification oracle (small)


@pytest.mark.parametrize("which", ["commit", "commit_empty"])
def test_variant_unify_against_brute_force(which, request, T):
    th = request.getfixturevalue(which).theory
    uni = universe(th, ["com", "open"], ["rock", "n1", "n2"], 3)
    terms = oracle_terms(th.sig, [T("n1"), T("N")], [T("rock"), T("X")], [T("C")], [T("D")])
    for a in terms:
        for b in terms:
            us = th.variant_unify(a, b)
            assert not us.bound_exhausted
            unsound, missing = check_unifiers(th, a, b, us, uni)
            assert not unsound, (render(a), render(b))
            assert not missing, (render(a), render(b), missing)


def test_oracle_detects_dropped_unifier(commit, T):
    th = commit.theory
    uni = universe(th, ["com", "open"], ["rock", "n1", "n2"], 3)
    a, b = T("open(N, C)"), T("D")
    us = th.variant_unify(a, b)
    assert len(us) > 1
    _, missing = check_unifiers(th, a, b, us[1:], uni)
    assert missing


# -------------------------------------------------------------- properties


def _terms(commit):
    from strandweaver.spec_cli.parser import parse_term

    T = lambda s: parse_term(commit, s)  # noqa: E731
    nonces = st.sampled_from([T("n1"), T("n2"), T("N"), T("M")])
    items = st.sampled_from([T("rock"), T("X"), T("Y")])
    coms = st.one_of(st.just(T("C")), st.builds(lambda n, i: App("com", [n, i]), nonces, items))
    datas = st.one_of(items, st.just(T("D")), st.builds(lambda n, c: App("open", [n, c]), nonces, coms))
    base = st.one_of(nonces, coms, datas)
    return st.recursive(base, lambda inner: st.builds(lambda a, b: App("pair", [a, b]), inner, inner),
                        max_leaves=6)


@pytest.fixture(scope="module")
def terms(commit):
    return _terms(commit)


def test_properties(commit, commit_empty, terms):
    th = commit.theory
    sig = commit.sig

    @settings(max_examples=150, deadline=None)
    @given(terms, terms)
    def normalize_and_unify(a, b):
        n = th.normalize(a)
        assert th.normalize(n) == n
        assert th.is_normal(n)
        for s in unify_all(a, b, sig):
            assert is_idempotent(s)
            assert apply(a, s) == apply(b, s)
            assert apply(apply(a, s), s) == apply(a, s)
        for s in th.variant_unify(a, b):
            assert th.normalize(apply(a, s)) == th.normalize(apply(b, s))

    @settings(max_examples=150, deadline=None)
    @given(terms, st.data())
    def match_is_unify_on_ground(p, data):
        g = data.draw(terms.filter(lambda t: not variables(t)))
        m = match(p, g, sig)
        u = unify(p, g, sig)
        assert (m is not None) == (u is not None)
        if m is not None:
            assert apply(p, m) == g
            assert set(m) <= variables(p)

    @settings(max_examples=100, deadline=None)
    @given(terms)
    def canonical_renaming_is_stable(t):
        r = canonical_renaming([t])
        t2 = apply(t, r)
        assert apply(t2, canonical_renaming([t2])) == t2
        assert term_key(t2) == term_key(apply(t2, canonical_renaming([t2])))

    normalize_and_unify()
    match_is_unify_on_ground()
    canonical_renaming_is_stable()
