import pytest

from conftest import domain
from strandweaver.bisim_harness import (
    BisimViolation,
    NotEnabled,
    PairedSystem,
    check_duality,
    check_paired,
    fuzz_bisim,
    step_paired,
)
from strandweaver.forwards_engine import CHOOSE, SEND_LEARN, TransitionLabel
from strandweaver.spec_cli.parser import parse_items, parse_term
from strandweaver.strand_model import SpecStrand, StrandSpec, to_cstr_ss


def system(spec, **kw):
    return PairedSystem(spec.roles, spec.theory, domain(spec), **kw)


def drop_first_branch(spec):
    ss = to_cstr_ss(spec.roles)
    s = next(s for s in ss if s.path)
    return ss.without(s.role, s.path[:1])


@pytest.mark.parametrize("name", ["toy", "encmode"])
def test_pass_and_mutations(spec_of, name):
    spec = spec_of(name)
    v = fuzz_bisim(system(spec), 8, 60, seed=0)
    assert v.ok and v.counterexample is None and v.steps > 0
    bad = fuzz_bisim(system(spec, strand_spec=drop_first_branch(spec)), 8, 60, seed=0)
    assert not bad.ok
    assert bad.counterexample.kind in ("enabled", "duality")
    noguard = fuzz_bisim(system(spec, pa_ik_guard=False), 8, 60, seed=0)
    assert not noguard.ok
    assert noguard.counterexample.kind == "enabled"
    assert noguard.counterexample.detail["pa_only"]


def test_depth_zero_and_trials(spec_of):
    spec = spec_of("toy")
    v = fuzz_bisim(system(spec), 0, 5)
    assert v.ok and v.steps == 0 and v.states_checked == 1
    with pytest.raises(ValueError):
        fuzz_bisim(system(spec), 3, 0)


def test_deterministic(spec_of):
    spec = spec_of("encmode")
    a = fuzz_bisim(system(spec), 6, 30, seed=5).to_json()
    b = fuzz_bisim(system(spec), 6, 30, seed=5).to_json()
    assert a == b


def test_duality_detects_extra_continuation(spec_of):
    spec = spec_of("toy")
    ss = to_cstr_ss(spec.roles)
    extra = parse_items(spec, "Alice [ +(X), -(h(X, Y)), {Y eq v0, 1}, +(s(X)), +(s(X)) ]")
    mutated = StrandSpec(ss.strands + (SpecStrand("Alice", (1,), extra),))
    sysm = system(spec, strand_spec=mutated)
    first = TransitionLabel("Alice", 1, 1, SEND_LEARN, parse_term(spec, "v0"))
    ps = step_paired(sysm.initial(), first, sysm)
    rep = check_duality(ps, sysm)
    assert not rep and rep.unmatched_processes[0]["process"] == ["Alice", 1]
    # labels still agree here, so only duality flags the state
    cex, _ = check_paired(ps, sysm, duality=False)
    assert cex is None
    cex, _ = check_paired(ps, sysm)
    assert cex.kind == "duality" and cex.trace == (first,)
    assert fuzz_bisim(sysm, 3, 40, seed=0).counterexample.kind == "duality"


def test_step_paired_errors(spec_of):
    spec = spec_of("toy")
    sysm = system(spec)
    ps = sysm.initial()
    assert check_duality(ps, sysm)
    with pytest.raises(NotEnabled):
        step_paired(ps, TransitionLabel("Bob", 1, 2, CHOOSE, "?", 1), sysm)
    # Bob's first branch is absent from the cut strand spec
    ss = to_cstr_ss(spec.roles)
    cut = system(spec, strand_spec=ss.without("Bob", (1,)))
    with pytest.raises(BisimViolation) as e:
        step_paired(cut.initial(), TransitionLabel("Bob", 1, 1, CHOOSE, "?", 1), cut)
    assert e.value.side == "pa"
