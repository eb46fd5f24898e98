"""Paired execution of the process and strand semantics.

A paired state records the shared label history, which witnesses membership
in the relation H constructively: both components are reached from their
initial states by exactly that history.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .forwards_engine import (
    ChoiceDomain,
    FWSemantics,
    FWState,
    PASemantics,
    PAState,
    TransitionLabel,
)
from .strand_model import (
    ConstrainedStrand,
    StrandSpec,
    canonical_items,
    normalize_items,
    strand_continuations,
    to_cstr_ss,
    to_cstr_ss_star,
)
from .term_kernel import ConvergentTheory, render, term_key


class NotEnabled(Exception):
    def __init__(self, label):
        super().__init__(f"label {label} is enabled on neither side")
        self.label = label


class BisimViolation(Exception):
    def __init__(self, pair, label, side: str, reason: str = ""):
        msg = f"{label} enabled only in {side.upper()}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.pair = pair
        self.label = label
        self.side = side


@dataclass(frozen=True)
class PairedState:
    pa: PAState
    fw: FWState
    history: tuple = ()


@dataclass
class DualityReport:
    ok: bool
    unmatched_processes: list = field(default_factory=list)
    unmatched_strands: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


@dataclass
class Counterexample:
    kind: str
    trace: tuple
    detail: dict

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "trace": [lab.to_json() for lab in self.trace],
            "detail": self.detail,
        }


@dataclass
class BisimVerdict:
    ok: bool
    trials: int
    steps: int
    states_checked: int
    counterexample: Optional[Counterexample] = None

    def to_json(self) -> dict:
        return {
            "verdict": "pass" if self.ok else "counterexample",
            "trials": self.trials,
            "steps": self.steps,
            "states_checked": self.states_checked,
            "counterexample": None if self.counterexample is None else self.counterexample.to_json(),
        }


class PairedSystem:
    """The two semantics of one protocol, built from roles and a strand spec.

    ``strand_spec`` defaults to the translation of ``roles``; passing a
    different one is how translation faults are injected.
    """

    def __init__(self, roles: dict, th: ConvergentTheory, dom: ChoiceDomain,
                 strand_spec: Optional[StrandSpec] = None, pa_ik_guard: bool = True,
                 fw_ik_guard: bool = True):
        self.roles = dict(roles)
        self.th = th
        self.dom = dom
        self.spec = strand_spec if strand_spec is not None else to_cstr_ss(self.roles)
        self.pa = PASemantics(self.roles, th, dom, ik_guard=pa_ik_guard)
        self.fw = FWSemantics(self.spec, th, dom, ik_guard=fw_ik_guard)
        self._cont_cache: dict = {}
        self._resid_cache: dict = {}

    def initial(self) -> PairedState:
        return PairedState(self.pa.initial(), self.fw.initial(), ())

    # -- duality
    def continuations(self, role: str, session: int, past: tuple) -> frozenset:
        key = (role, session, past)
        hit = self._cont_cache.get(key)
        if hit is None:
            conts = strand_continuations(self.spec, ConstrainedStrand(role, session, past), self.th)
            hit = frozenset(canonical_items(c) for c in conts)
            self._cont_cache[key] = hit
        return hit

    def residual(self, body) -> frozenset:
        hit = self._resid_cache.get(body)
        if hit is None:
            hit = frozenset(
                canonical_items(normalize_items(items, self.th)) for items, _ in to_cstr_ss_star(body)
            )
            self._resid_cache[body] = hit
        return hit


def step_paired(ps: PairedState, label: TransitionLabel, system: PairedSystem) -> PairedState:
    pa_next = [st for lab, st in system.pa.successors(ps.pa) if lab == label]
    fw_next = [st for lab, st in system.fw.successors(ps.fw) if lab == label]
    if not pa_next and not fw_next:
        raise NotEnabled(label)
    if not fw_next:
        raise BisimViolation(ps, label, "pa")
    if not pa_next:
        raise BisimViolation(ps, label, "fw")
    return _pair_up(pa_next[0], fw_next, ps.history + (label,), system)


def _pair_up(pa: PAState, fw_options: list, history: tuple, system: PairedSystem) -> PairedState:
    """Pick the FW successor dual to ``pa``; labels rarely admit several."""
    if len(fw_options) > 1:
        for fw in fw_options:
            cand = PairedState(pa, fw, history)
            if check_duality(cand, system):
                return cand
    return PairedState(pa, fw_options[0], history)


def check_duality(ps: PairedState, system: PairedSystem) -> DualityReport:
    """Each residual process translates to its partner strand's continuations."""
    procs = {(lp.role, lp.session): lp for lp in ps.pa.processes}
    strands = {(s.role, s.session): s for s in ps.fw.strands}
    bad_p, bad_s = [], []
    for key, lp in procs.items():
        s = strands.get(key)
        if s is None:
            bad_p.append({"process": list(key), "reason": "no partner strand"})
            continue
        if system.residual(lp.body) != system.continuations(s.role, s.session, s.past):
            bad_p.append({"process": list(key), "reason": "translation differs from continuations"})
    for key in strands:
        if key not in procs:
            bad_s.append({"strand": list(key), "reason": "no partner process"})
    return DualityReport(not bad_p and not bad_s, bad_p, bad_s)


def _ik_json(ik) -> list:
    return [render(t) for t in sorted(ik, key=term_key)]


def check_paired(ps: PairedState, system: PairedSystem, duality: bool = True):
    """Return (counterexample or None, common successor pairs)."""
    pa_succ = system.pa.successors(ps.pa)
    fw_succ = system.fw.successors(ps.fw)
    pa_labels = {lab for lab, _ in pa_succ}
    fw_labels = {lab for lab, _ in fw_succ}
    if pa_labels != fw_labels:
        only_pa = sorted(pa_labels - fw_labels, key=TransitionLabel.key)
        only_fw = sorted(fw_labels - pa_labels, key=TransitionLabel.key)
        return Counterexample("enabled", ps.history, {
            "pa_only": [str(lab) for lab in only_pa],
            "fw_only": [str(lab) for lab in only_fw],
        }), []
    if ps.pa.ik != ps.fw.ik:
        return Counterexample("ik", ps.history, {"pa": _ik_json(ps.pa.ik), "fw": _ik_json(ps.fw.ik)}), []
    if duality:
        rep = check_duality(ps, system)
        if not rep:
            return Counterexample("duality", ps.history, {
                "processes": rep.unmatched_processes,
                "strands": rep.unmatched_strands,
            }), []
    return None, (pa_succ, fw_succ)


def fuzz_bisim(system: PairedSystem, depth: int, trials: int, seed: int = 0,
               duality: bool = True) -> BisimVerdict:
    """Random paired walks; stop at the first state violating the relation."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    rng = random.Random(seed)
    steps = 0
    checked = 0
    seen_ok: set = set()
    for _ in range(trials):
        ps = system.initial()
        for d in range(depth + 1):
            key = (ps.pa, ps.fw)
            if key in seen_ok:
                cex, succ = None, None
            else:
                cex, succ = check_paired(ps, system, duality)
                checked += 1
                if cex is not None:
                    return BisimVerdict(False, trials, steps, checked, cex)
                seen_ok.add(key)
            if d == depth:
                break
            if succ is None:
                succ = (system.pa.successors(ps.pa), system.fw.successors(ps.fw))
            pa_succ, fw_succ = succ
            if not pa_succ:
                break
            label, pa_next = pa_succ[rng.randrange(len(pa_succ))]
            fw_opts = [st for lab, st in fw_succ if lab == label]
            ps = _pair_up(pa_next, fw_opts, ps.history + (label,), system)
            steps += 1
    return BisimVerdict(True, trials, steps, checked)
