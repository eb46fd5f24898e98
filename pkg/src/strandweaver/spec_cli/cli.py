"""Command-line front end: check, translate, simulate, bisim, analyze.

Exit status: 0 success or no attack, 1 attack found (or bisimulation
counterexample), 2 usage, parse or well-formedness error, 3 internal error.
JSON output is canonical (sorted keys, fixed separators) and carries a
top-level ``format_version``.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass

import click

from ..backwards_engine import (
    FOUND,
    AttackError,
    AttackPattern,
    AttackStrand,
    PatternNotStronglyIrreducible,
    SearchConfig,
    forward_schedule,
    search,
)
from ..bisim_harness import PairedSystem, fuzz_bisim
from ..forwards_engine import ChoiceDomain, MissingDomain, explore, make_semantics, run_trace
from ..proc_algebra import KindConflict, choice_vars, fresh_vars, variable_kinds, well_formed
from ..strand_model import to_cstr_ss
from ..term_kernel import render, term_key
from .parser import (
    AttackSpec,
    ResolutionError,
    SpecFile,
    SpecSyntaxError,
    parse_spec,
    print_strand_spec,
)

FORMAT_VERSION = 1
EXIT_OK, EXIT_ATTACK, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageFailure(Exception):
    """Bad input detected after argument parsing; maps to exit status 2."""


@dataclass
class Loaded:
    path: str
    spec: SpecFile
    dom: ChoiceDomain


def emit_json(obj: dict) -> None:
    doc = {"format_version": FORMAT_VERSION, **obj}
    click.echo(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False))


def thread_cap() -> int:
    """STRANDWEAVER_THREADS caps engine parallelism; the engines here run sequentially."""
    raw = os.environ.get("STRANDWEAVER_THREADS")
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageFailure(f"STRANDWEAVER_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageFailure(f"STRANDWEAVER_THREADS must be a positive integer, got {raw!r}")
    return n


def load(path: str) -> Loaded:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise UsageFailure(f"{path}: {e.strerror}") from None
    try:
        spec = parse_spec(data)
    except (SpecSyntaxError, ResolutionError) as e:
        raise UsageFailure(f"{path}: {e}") from None
    return Loaded(path, spec, ChoiceDomain(dict(spec.domains), spec.sig))


def attack_pattern(a: AttackSpec) -> AttackPattern:
    def strand(p):
        return AttackStrand(p.role, tuple(p.items), p.future)

    return AttackPattern(
        a.ident,
        tuple(strand(p) for p in a.strands),
        tuple(a.goals),
        tuple(tuple(strand(p) for p in g) for g in a.nevers),
        a.name,
    )


def _names(vs) -> list:
    return sorted(v.name for v in vs)


def check_roles(ld: Loaded) -> list:
    """Per-role well-formedness, variable classification and domain coverage."""
    out = []
    for role, body in ld.spec.roles.items():
        rep = well_formed(body)
        entry = {
            "role": role,
            "well_formed": rep.ok,
            "diagnostic": rep.diagnostic,
            "variables": list(rep.variables),
            "location": list(rep.location),
        }
        try:
            kinds = variable_kinds(body)
        except KindConflict as e:
            entry["kind_conflict"] = str(e)
            kinds = {}
        entry["fresh"] = _names(fresh_vars(body))
        entry["choice"] = _names(v for v, k in kinds.items() if k == "choice")
        entry["pattern"] = _names(v for v, k in kinds.items() if k == "pattern")
        missing = []
        if "kind_conflict" not in entry:
            for v in sorted(choice_vars(body), key=term_key):
                try:
                    ld.dom.for_var(v)
                except MissingDomain:
                    missing.append(f"{v.name}:{v.sort}")
        entry["missing_domains"] = missing
        entry["ok"] = rep.ok and "kind_conflict" not in entry and not missing
        out.append(entry)
    return out


def _require_well_formed(ld: Loaded) -> None:
    bad = [r for r in check_roles(ld) if not r["ok"]]
    if bad:
        r = bad[0]
        why = r["diagnostic"] or r.get("kind_conflict") or \
            f"no choice domain for {', '.join(r['missing_domains'])}"
        raise UsageFailure(f"{ld.path}: role {r['role']}: {why}")


def _ik_json(ik) -> list:
    return [render(t) for t in sorted(ik, key=term_key)]


def _run(fn, *args) -> int:
    try:
        thread_cap()
        return fn(*args)
    except UsageFailure as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_USAGE
    except Exception as e:
        click.echo(f"internal error: {type(e).__name__}: {e}", err=True)
        return EXIT_INTERNAL


# ---------------------------------------------------------------- commands


@click.group()
def main():
    """Process-algebra and strand-space protocol analysis."""


spec_arg = click.argument("spec_file", type=click.Path(dir_okay=False))
json_opt = click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")


@main.command()
@spec_arg
@json_opt
def check(spec_file, as_json):
    """Well-formedness and variable classification of every role."""
    sys.exit(_run(_check, spec_file, as_json))


def _check(spec_file, as_json) -> int:
    ld = load(spec_file)
    roles = check_roles(ld)
    ok = all(r["ok"] for r in roles)
    if as_json:
        emit_json({"command": "check", "ok": ok, "roles": roles})
    else:
        for r in roles:
            status = "ok" if r["ok"] else "NOT WELL FORMED" if not r["well_formed"] else "ERROR"
            click.echo(f"{r['role']}: {status}")
            if r["diagnostic"]:
                click.echo(f"  {r['diagnostic']}")
            if r.get("kind_conflict"):
                click.echo(f"  {r['kind_conflict']}")
            if r["missing_domains"]:
                click.echo(f"  missing choice domain: {', '.join(r['missing_domains'])}")
            for k in ("fresh", "choice", "pattern"):
                if r[k]:
                    click.echo(f"  {k}: {' '.join(r[k])}")
    return EXIT_OK if ok else EXIT_USAGE


@main.command()
@spec_arg
@json_opt
def translate(spec_file, as_json):
    """Strand specification of the protocol, one strand per line."""
    sys.exit(_run(_translate, spec_file, as_json))


def _translate(spec_file, as_json) -> int:
    ld = load(spec_file)
    _require_well_formed(ld)
    ss = to_cstr_ss(ld.spec.roles)
    if as_json:
        emit_json({"command": "translate", "strands": [
            {"role": s.role, "path": list(s.path), "items": [str(u) for u in s.items]} for s in ss
        ]})
    else:
        click.echo(print_strand_spec(ss), nl=False)
    return EXIT_OK


@main.command()
@spec_arg
@click.option("--semantics", type=click.Choice(["pa", "fw"]), default="fw", show_default=True)
@click.option("--depth", type=click.IntRange(min=0), default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--strategy", type=click.Choice(["bfs", "random"]), default="bfs", show_default=True)
@click.option("--samples", type=click.IntRange(min=1), default=16, show_default=True,
              help="Walks drawn by the random strategy.")
@click.option("--max-states", type=click.IntRange(min=1), default=None,
              help="Stop bfs after this many distinct states.")
@json_opt
def simulate(spec_file, semantics, depth, seed, strategy, samples, max_states, as_json):
    """Bounded forwards execution under either semantics."""
    sys.exit(_run(_simulate, spec_file, semantics, depth, seed, strategy, samples,
                  max_states, as_json))


def _simulate(spec_file, semantics, depth, seed, strategy, samples, max_states, as_json) -> int:
    ld = load(spec_file)
    _require_well_formed(ld)
    sem = make_semantics(semantics, ld.spec.roles, ld.spec.theory, ld.dom)
    res = explore(sem, depth, seed=seed, strategy=strategy, samples=samples, max_states=max_states)
    traces = []
    for trace in res.traces:
        final = run_trace(sem, trace)
        traces.append({"labels": [lab.to_json() for lab in trace], "ik": _ik_json(final.ik)})
    if as_json:
        emit_json({
            "command": "simulate", "semantics": semantics, "strategy": strategy, "depth": depth,
            "seed": seed, "states": res.states, "transitions": res.transitions,
            "truncated": res.truncated, "traces": traces,
        })
    else:
        for k, (trace, t) in enumerate(zip(res.traces, traces)):
            click.echo(f"trace {k}")
            for lab in trace:
                click.echo(f"  {lab}")
            click.echo(f"  IK {{{', '.join(t['ik'])}}}")
    return EXIT_OK


@main.command()
@spec_arg
@click.option("--depth", type=click.IntRange(min=0), default=8, show_default=True)
@click.option("--trials", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--drop-branch", default=None, metavar="ROLE:PATH",
              help="Fault injection: drop the strands of ROLE under branch PATH (e.g. Init:1).")
@click.option("--no-ik-guard", is_flag=True, help="Fault injection: PA sends skip the IK guard.")
@json_opt
def bisim(spec_file, depth, trials, seed, drop_branch, no_ik_guard, as_json):
    """Paired random execution of both semantics."""
    sys.exit(_run(_bisim, spec_file, depth, trials, seed, drop_branch, no_ik_guard, as_json))


def _parse_branch(text: str) -> tuple:
    role, sep, path = text.partition(":")
    try:
        nums = tuple(int(x) for x in path.split(".")) if path else ()
    except ValueError:
        nums = None
    if not sep or not role or not nums or any(n not in (1, 2) for n in nums):
        raise UsageFailure(f"--drop-branch expects ROLE:PATH with PATH like 1 or 2.1, got {text!r}")
    return role, nums


def _bisim(spec_file, depth, trials, seed, drop_branch, no_ik_guard, as_json) -> int:
    ld = load(spec_file)
    _require_well_formed(ld)
    ss = to_cstr_ss(ld.spec.roles)
    if drop_branch:
        role, path = _parse_branch(drop_branch)
        if role not in ld.spec.roles:
            raise UsageFailure(f"--drop-branch: no role {role}")
        ss = ss.without(role, path)
    system = PairedSystem(ld.spec.roles, ld.spec.theory, ld.dom, strand_spec=ss,
                          pa_ik_guard=not no_ik_guard)
    v = fuzz_bisim(system, depth, trials, seed)
    if as_json:
        emit_json({"command": "bisim", "depth": depth, "seed": seed, **v.to_json()})
    else:
        click.echo(f"{'pass' if v.ok else 'counterexample'}: {v.trials} trials, "
                   f"{v.steps} steps, {v.states_checked} paired states checked")
        if v.counterexample is not None:
            cx = v.counterexample
            click.echo(f"  kind: {cx.kind}")
            for lab in cx.trace:
                click.echo(f"  {lab}")
            click.echo(f"  {json.dumps(cx.detail, sort_keys=True)}")
    return EXIT_OK if v.ok else EXIT_ATTACK


@main.command()
@spec_arg
@click.option("--depth", type=click.IntRange(min=0), default=12, show_default=True)
@click.option("--attack", "attacks", multiple=True, help="Attack to analyze (repeatable); default all.")
@click.option("--lookahead", type=click.IntRange(min=0), default=3, show_default=True,
              help="Depth of the explainability check on positive facts.")
@click.option("--max-states", type=click.IntRange(min=1), default=None)
@json_opt
def analyze(spec_file, depth, attacks, lookahead, max_states, as_json):
    """Backwards reachability for the attack patterns of the spec file."""
    sys.exit(_run(_analyze, spec_file, depth, attacks, lookahead, max_states, as_json))


def _analyze(spec_file, depth, attacks, lookahead, max_states, as_json) -> int:
    ld = load(spec_file)
    _require_well_formed(ld)
    wanted = list(ld.spec.attacks)
    if attacks:
        try:
            wanted = [ld.spec.attack(a) for a in attacks]
        except KeyError as e:
            raise UsageFailure(f"{spec_file}: {e.args[0]}") from None
    if not wanted:
        raise UsageFailure(f"{spec_file}: no attacks declared")
    ss = to_cstr_ss(ld.spec.roles)
    th = ld.spec.theory
    cfg = SearchConfig(depth=depth, lookahead=lookahead, max_states=max_states)
    reports = []
    for a in wanted:
        try:
            res = search(attack_pattern(a), ss, th, cfg, ld.dom)
        except (AttackError, PatternNotStronglyIrreducible) as e:
            raise UsageFailure(f"{spec_file}: attack {a.ident}: {e}") from None
        rep = {
            "attack": a.ident, "name": a.name, "verdict": res.verdict, "depth": res.depth,
            "states": res.states, "pruned": dict(sorted(res.pruned.items())),
            "truncated": res.truncated, "incomplete": res.incomplete,
        }
        if res.verdict == FOUND:
            rep["path"] = [p.to_json() for p in res.path]
            rep["initial_state"] = res.initial_state.to_json()
            sched = forward_schedule(res, th, ld.dom)
            rep["schedule"] = None if sched is None else [lab.to_json() for lab in sched]
        reports.append(rep)
    if as_json:
        emit_json({"command": "analyze", "depth": depth, "lookahead": lookahead,
                   "attacks": reports})
    else:
        for r in reports:
            title = f" \"{r['name']}\"" if r["name"] else ""
            click.echo(f"attack {r['attack']}{title}: {r['verdict']} "
                       f"(depth {r['depth']}, {r['states']} states)")
            for p in r.get("path", ()):
                sub = ", ".join(f"{k} -> {v}" for k, v in p["substitution"].items())
                click.echo(f"  {p['rule']:6} {p['role']}#{p['strand']}@{p['position']}"
                           f"  {p['state']}{'  ' + sub if sub else ''}")
            if r.get("schedule"):
                click.echo("  forwards schedule:")
                for lab in r["schedule"]:
                    click.echo(f"    ({lab['role']}, {lab['session']}, {lab['step']}, "
                               f"{lab['action']}, {lab['branch']})")
    return EXIT_ATTACK if any(r["verdict"] == FOUND for r in reports) else EXIT_OK


if __name__ == "__main__":
    main()
