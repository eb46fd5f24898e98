from pathlib import Path

import pytest

from strandweaver.forwards_engine import ChoiceDomain
from strandweaver.spec_cli.parser import parse_spec, parse_term

SPECS = Path(__file__).resolve().parent.parent / "specs"

# Commitment theory over three constants, used by the unification oracles.
COMMIT = """
THEORY
  sorts Item Nonce Com Data
  subsort Item < Data
  subsort Nonce Com Data < Msg
  op rock : -> Item
  op n1 n2 : -> Nonce
  op com : Nonce Item -> Com
  op open : Nonce Com -> Data
  op pair : Msg Msg -> Msg
  var N M : Nonce
  var X Y : Item
  var C : Com
  var D : Data
  rule open(N, com(N, X)) -> X
"""


def load_spec(name: str):
    return parse_spec((SPECS / f"{name}.spec").read_bytes())


def domain(spec) -> ChoiceDomain:
    return ChoiceDomain(dict(spec.domains), spec.sig)


@pytest.fixture(scope="session")
def commit():
    return parse_spec(COMMIT)


@pytest.fixture(scope="session")
def commit_empty():
    """Same signature, no equations."""
    return parse_spec(COMMIT.replace("  rule open(N, com(N, X)) -> X\n", ""))


@pytest.fixture(scope="session")
def T(commit):
    return lambda text: parse_term(commit, text)


@pytest.fixture(scope="session")
def spec_of():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_spec(name)
        return cache[name]

    return get


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
