import sys

import pytest
from hypothesis import HealthCheck, settings

from ipacheck.composer import compositional_check, direct_check
from ipacheck.corpus import load_fixture
from ipacheck.parser import parse_spec

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

COUNTER = """
spec Counter
vars
  x : 0..3
init
  x = 0
module Main
  action Inc
    when x < 3
    then x' = x + 1
"""

COUNTER_UPDOWN = COUNTER + """  action Dec
    when x > 0
    then x' = x - 1
"""


@pytest.fixture
def counter():
    return parse_spec(COUNTER, "counter.ipa")


@pytest.fixture
def counter_updown():
    return parse_spec(COUNTER_UPDOWN, "updown.ipa")


@pytest.fixture(scope="session")
def raft3():
    return load_fixture("raft3").manifest()


@pytest.fixture(scope="session")
def raft3_comp(raft3):
    return compositional_check(raft3.root, raft3)


@pytest.fixture(scope="session")
def raft3_direct(raft3):
    return direct_check(raft3.root, raft3)


@pytest.fixture(scope="session")
def quorum_bug():
    return load_fixture("raft3-bug-quorum").manifest()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod._line(n))
