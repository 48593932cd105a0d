"""Acceptance criteria 1-7, one test each.

Each check prints a single [PASS]/[FAIL] line; the lines are also repeated in
the terminal summary under "acceptance criteria". Regulators are trained once
per module and shared between checks.
"""

import pytest

from boundary_rl import acceptance

RESULTS = []


@pytest.fixture(scope="module")
def session():
    return acceptance.Session(seed=0)


def run(name, session):
    res = acceptance.CHECKS[name](session)
    RESULTS.append(res.line())
    print(res.line())
    assert res.passed, res.line()


def test_criterion_1_circuit_forward_weight(session):
    run("circuit_forward", session)


def test_criterion_2_circuit_backward_weight(session):
    run("circuit_backward", session)


def test_criterion_3_cubic_critic(session):
    run("cubic", session)


def test_criterion_4_gap_monotone(session):
    run("gap", session)


@pytest.mark.slow
def test_criterion_5_manipulator_composite(session):
    run("manipulator", session)


def test_criterion_6_invariants(session):
    run("invariants", session)


@pytest.mark.slow
def test_criterion_7_persistent_excitation(session):
    run("pe", session)
