import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import domain
from strandweaver.forwards_engine import (
    CHOOSE,
    IF,
    RECV,
    SEND_LEARN,
    SEND_SILENT,
    ChoiceDomain,
    FWSemantics,
    MissingDomain,
    PASemantics,
    ScheduleStuck,
    TransitionLabel,
    explore,
    fw_enabled,
    ik_from_labels,
    make_semantics,
    pa_enabled,
    run_trace,
)
from strandweaver.spec_cli.parser import parse_term
from strandweaver.strand_model import to_cstr_ss
from strandweaver.term_kernel import Var


def both(spec, **kw):
    dom = domain(spec)
    return (PASemantics(spec.roles, spec.theory, dom, **kw),
            FWSemantics(to_cstr_ss(spec.roles), spec.theory, dom, **kw))


def all_traces(sem, depth):
    """Every label sequence of length <= depth, by exhaustive DFS."""
    out = set()

    def go(st, trace):
        out.add(trace)
        if len(trace) == depth:
            return
        for lab, nxt in sem.successors(st):
            go(nxt, trace + (lab,))

    go(sem.initial(), ())
    return out


def test_toy_initial_labels(spec_of):
    spec = spec_of("toy")
    v = lambda s: parse_term(spec, s)  # noqa: E731
    want = {
        TransitionLabel("Alice", 1, 1, SEND_LEARN, v("v0")),
        TransitionLabel("Alice", 1, 1, SEND_SILENT, v("v0")),
        TransitionLabel("Alice", 1, 1, SEND_LEARN, v("v1")),
        TransitionLabel("Alice", 1, 1, SEND_SILENT, v("v1")),
        TransitionLabel("Bob", 1, 1, CHOOSE, "?", 1),
        TransitionLabel("Bob", 1, 1, CHOOSE, "?", 2),
    }
    pa, fw = both(spec)
    assert {lab for lab, _ in pa.successors(pa.initial())} == want
    assert {lab for lab, _ in fw.successors(fw.initial())} == want
    dom = domain(spec)
    assert {lab for lab, _ in pa_enabled(pa.initial(), dom, spec.roles, spec.theory)} == want
    assert {lab for lab, _ in fw_enabled(fw.initial(), dom, to_cstr_ss(spec.roles), spec.theory)} == want


def test_receive_needs_knowledge(spec_of):
    spec = spec_of("hs_server")
    pa, fw = both(spec)
    assert pa.successors(pa.initial()) == []
    assert fw.successors(fw.initial()) == []


def test_toy_guard_and_receive(spec_of):
    spec = spec_of("toy")
    v = lambda s: parse_term(spec, s)  # noqa: E731
    pa, _ = both(spec)
    sched = [
        TransitionLabel("Bob", 1, 1, CHOOSE, "?", 1),
        TransitionLabel("Bob", 1, 2, SEND_LEARN, v("h(v0, v0)")),
        TransitionLabel("Alice", 1, 1, SEND_LEARN, v("v0")),
        TransitionLabel("Alice", 1, 2, RECV, v("h(v0, v0)")),
    ]
    st = run_trace(pa, sched)
    labs = [lab for lab, _ in pa.successors(st) if (lab.role, lab.session) == ("Alice", 1)]
    assert [(lab.kind, lab.branch) for lab in labs] == [(IF, 1)]
    assert st.ik == {v("v0"), v("h(v0, v0)")}
    with pytest.raises(ScheduleStuck) as e:
        run_trace(pa, sched + [TransitionLabel("Alice", 1, 3, IF, labs[0].term, 2)])
    assert e.value.index == 4


def test_ik_guard():
    # without the guard a known term can be "learned" again
    from strandweaver.spec_cli.parser import parse_spec

    spec = parse_spec("THEORY\n sorts V\n subsort V < Msg\n op a : -> V\n"
                      "PROCESSES\n role A = +(a) . +(a)\n")
    for guard, n in ((True, 1), (False, 2)):
        pa, fw = both(spec, ik_guard=guard)
        for sem in (pa, fw):
            st = run_trace(sem, [TransitionLabel("A", 1, 1, SEND_LEARN, parse_term(spec, "a"))])
            kinds = [lab.kind for lab, _ in sem.successors(st) if lab.session == 1]
            assert kinds.count(SEND_LEARN) == n - 1
            assert kinds.count(SEND_SILENT) == 1


def test_depth_zero_and_strategies(spec_of):
    spec = spec_of("toy")
    for kind in ("pa", "fw"):
        sem = make_semantics(kind, spec.roles, spec.theory, domain(spec))
        r = explore(sem, 0)
        assert r.traces == [()] and r.states == 1 and r.transitions == 0
        a = explore(sem, 5, seed=3, strategy="random", samples=20)
        b = explore(sem, 5, seed=3, strategy="random", samples=20)
        assert a.traces == b.traces
        assert all(len(t) <= 5 for t in a.traces)
    with pytest.raises(ValueError):
        explore(sem, 2, strategy="dfs")


def test_missing_domain():
    dom = ChoiceDomain({"Val": ["v0"]})
    with pytest.raises(MissingDomain):
        dom.for_var(Var("X", "Other"))


@pytest.mark.parametrize("name,depth", [("toy", 4), ("encmode", 3), ("rps", 3)])
def test_pa_fw_same_traces(spec_of, name, depth):
    pa, fw = both(spec_of(name))
    a = all_traces(pa, depth)
    assert a == all_traces(fw, depth)
    assert len(a) > 1


# Counted by hand. Depth 1: Alice sends v0/v1 learned/silent (4), Bob picks
# a branch (2). Depth 2 after each: Alice learned (5 each: new Alice can't
# relearn that value, 3, plus Bob 2), Alice silent (6 each), Bob ?1 (his send
# 4, Alice 4, new Bob 2), Bob ?2 (receive blocked: Alice 4, new Bob 2).
TOY_TRACE_COUNTS = {0: 1, 1: 7, 2: 7 + 5 + 5 + 6 + 6 + 10 + 6}


def test_toy_trace_counts(spec_of):
    pa, _ = both(spec_of("toy"))
    ts = all_traces(pa, 2)
    assert {d: sum(1 for t in ts if len(t) <= d) for d in TOY_TRACE_COUNTS} == TOY_TRACE_COUNTS


def test_properties(spec_of):
    spec = spec_of("toy")
    pa, fw = both(spec)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 10_000), max_size=7))
    def walk(choices):
        sp, sf = pa.initial(), fw.initial()
        trace = []
        for c in choices:
            succ = pa.successors(sp)
            if not succ:
                break
            lab, nxt = succ[c % len(succ)]
            # IK only grows, and only through learning sends
            assert sp.ik <= nxt.ik
            assert len(nxt.ik - sp.ik) == (1 if lab.kind == SEND_LEARN else 0)
            fnext = [s for l2, s in fw.successors(sf) if l2 == lab]
            assert fnext, lab
            sp, sf = nxt, fnext[0]
            trace.append(lab)
            assert sp.ik == sf.ik == ik_from_labels(trace)
        assert run_trace(pa, trace) == sp

    walk()
