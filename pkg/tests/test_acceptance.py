"""Acceptance criteria, one test each; a summary line per criterion is printed at the end."""

import json
import os
import subprocess
import sys
import time
from contextlib import contextmanager

import pytest

from conftest import SPECS, domain
from oracles import check_unifiers, oracle_terms, universe
from strandweaver.backwards_engine import (
    EXHAUSTED,
    FOUND,
    NOT_FOUND,
    SearchConfig,
    attack_instances_backward,
    attack_instances_forward,
    find_liftings,
    forward_schedule,
    load_attack,
    one_step_lemmas_test,
    search,
)
from strandweaver.bisim_harness import PairedSystem, fuzz_bisim
from strandweaver.forwards_engine import FWSemantics, run_trace
from strandweaver.spec_cli.cli import attack_pattern
from strandweaver.spec_cli.parser import parse_items
from strandweaver.strand_model import same_items_up_to_renaming, to_cstr_ss

from test_strand_model import SERVER_STRANDS

RESULTS: list = []


@contextmanager
def criterion(n: int, what: str, budget: float = None):
    t0 = time.perf_counter()
    notes: list = []
    try:
        yield notes
    except BaseException:
        RESULTS.append(f"criterion {n}: FAIL  {what} ({time.perf_counter() - t0:.1f}s)")
        raise
    dt = time.perf_counter() - t0
    ok = budget is None or dt < budget
    extra = f"; {'; '.join(notes)}" if notes else ""
    RESULTS.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {what} ({dt:.1f}s{extra})")
    assert ok, f"took {dt:.1f}s, budget {budget}s"


def cli(*args, seed="0"):
    env = {**os.environ, "PYTHONHASHSEED": seed}
    return subprocess.run([sys.executable, "-m", "strandweaver", *map(str, args)],
                          capture_output=True, env=env, check=False)


def test_c1_check(spec_of):
    with criterion(1, "check accepts the client and server, rejects the responder naming r"):
        assert cli("check", SPECS / "hs_client.spec").returncode == 0
        assert cli("check", SPECS / "hs_server.spec").returncode == 0
        r = cli("check", "--json", SPECS / "lost_fresh.spec")
        assert r.returncode == 2
        (role,) = json.loads(r.stdout)["roles"]
        assert role["role"] == "Resp" and role["variables"] == ["r"]


def test_c2_translation(spec_of):
    with criterion(2, "server translation equals the two expected strands"):
        spec = spec_of("hs_server")
        ss = to_cstr_ss(spec.roles)
        want = [parse_items(spec, s) for s in SERVER_STRANDS]
        assert len(ss) == 2
        assert all(same_items_up_to_renaming(s.items, w) for s, w in zip(ss, want))


def _first_branch(ss):
    s = next(s for s in ss if s.path)
    return s.role, s.path[:1]


def test_c3_bisim(spec_of):
    with criterion(3, "bisimulation fuzzing on encmode and rps, mutations caught", 60) as notes:
        for name in ("encmode", "rps"):
            spec = spec_of(name)
            th, dom = spec.theory, domain(spec)
            v = fuzz_bisim(PairedSystem(spec.roles, th, dom), 8, 200, seed=0)
            assert v.ok, v.to_json()
            role, path = _first_branch(to_cstr_ss(spec.roles))
            cut = to_cstr_ss(spec.roles).without(role, path)
            drop = fuzz_bisim(PairedSystem(spec.roles, th, dom, strand_spec=cut), 8, 200, seed=0)
            assert not drop.ok
            noguard = fuzz_bisim(PairedSystem(spec.roles, th, dom, pa_ik_guard=False), 8, 200, seed=0)
            assert not noguard.ok
            notes.append(f"{name}: {v.steps} steps, drop {role}:{path[0]} -> {drop.counterexample.kind}, "
                         f"no guard -> {noguard.counterexample.kind}")


def test_c4_lemmas(spec_of):
    with criterion(4, "one-step lemmas on encmode, sat-check removal detected", 60) as notes:
        spec = spec_of("encmode")
        ss, th, dom = to_cstr_ss(spec.roles), spec.theory, domain(spec)
        rep = one_step_lemmas_test(ss, th, dom, steps=100, seed=0)
        assert rep.ok, rep.to_json()
        assert rep.completeness_steps >= 100 and rep.soundness_steps >= 100
        bad = one_step_lemmas_test(ss, th, dom, steps=300, seed=0, check_diseq_sat=False)
        assert not bad.ok
        notes.append(f"{rep.completeness_steps}+{rep.soundness_steps} steps clean, "
                     f"mutant caught after {bad.soundness_steps} soundness steps")


def test_c5_encmode(spec_of):
    with criterion(5, "encmode attacks 2 and 3 exhausted within depth 12") as notes:
        spec = spec_of("encmode")
        ss, th, dom = to_cstr_ss(spec.roles), spec.theory, domain(spec)
        for ident in ("2", "3"):
            r = search(attack_pattern(spec.attack(ident)), ss, th, SearchConfig(depth=12), dom)
            assert r.verdict == EXHAUSTED, (ident, r.verdict)
            notes.append(f"attack {ident}: depth {r.depth}, {r.states} states")


def test_c6_rps(spec_of):
    with criterion(6, "rps outcomes found, attacks 1 and 2 not found at depth 15", 600) as notes:
        spec = spec_of("rps")
        ss, th, dom = to_cstr_ss(spec.roles), spec.theory, domain(spec)
        fw = FWSemantics(ss, th, dom)
        for ident in ("win", "lose", "tie"):
            pat = attack_pattern(spec.attack(ident))
            r = search(pat, ss, th, SearchConfig(depth=15), dom)
            assert r.verdict == FOUND, (ident, r.verdict)
            g = run_trace(fw, forward_schedule(r, th, dom), th)
            assert find_liftings(load_attack(pat, ss, th), g, th)
            notes.append(f"{ident} at depth {r.depth}")
        for ident in ("1", "2"):
            r = search(attack_pattern(spec.attack(ident)), ss, th, SearchConfig(depth=15), dom)
            assert r.verdict in (NOT_FOUND, EXHAUSTED), (ident, r.verdict)
            notes.append(f"attack {ident}: {r.verdict}")


def test_c7_toy_completeness(spec_of):
    with criterion(7, "toy forwards and backwards attack instances agree at depth 6", 120) as notes:
        spec = spec_of("toy")
        ss, th, dom = to_cstr_ss(spec.roles), spec.theory, domain(spec)
        fw = FWSemantics(ss, th, dom)
        for a in spec.attacks:
            pat = attack_pattern(a)
            r = search(pat, ss, th, SearchConfig(depth=6, all_paths=True), dom)
            back = attack_instances_backward(r, th, dom)
            fwd = attack_instances_forward(pat, fw, 6)
            assert back == fwd, a.ident
            notes.append(f"attack {a.ident}: {len(fwd)}")


@pytest.mark.parametrize("which", ["commit", "commit_empty"])
def test_c8_variant_unify(which, request, T):
    label = "commitment theory" if which == "commit" else "empty theory"
    with criterion(8, f"variant unification agrees with brute force ({label})") as notes:
        th = request.getfixturevalue(which).theory
        uni = universe(th, ["com", "open"], ["rock", "n1", "n2"], 3)
        terms = oracle_terms(th.sig, [T("n1"), T("N")], [T("rock"), T("X")], [T("C")], [T("D")])
        for a in terms:
            for b in terms:
                us = th.variant_unify(a, b)
                unsound, missing = check_unifiers(th, a, b, us, uni)
                assert not unsound and not missing
        notes.append(f"{len(terms) ** 2} problems")


def test_c9_json_determinism():
    runs = [
        ("analyze", "--json", SPECS / "encmode.spec"),
        ("bisim", "--json", "--trials", "50", SPECS / "rps.spec"),
        ("simulate", "--json", "--strategy", "random", "--seed", "3", SPECS / "encmode.spec"),
        ("translate", "--json", SPECS / "rps.spec"),
    ]
    with criterion(9, "JSON output byte-identical across runs") as notes:
        for args in runs:
            outs = {cli(*args, seed=s).stdout for s in ("0", "12345")}
            assert len(outs) == 1, args[0]
        notes.append(f"{len(runs)} commands")
