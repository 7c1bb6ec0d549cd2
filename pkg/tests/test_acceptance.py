"""The twelve acceptance criteria, one test each.

The whole suite is solved once per session (about a minute and a half) and
each criterion prints its own pass/fail line, also under ``pytest -q``.
"""
import pytest

from coherdist.acceptance import run_all


@pytest.fixture(scope="module")
def checks():
    return {c.number: c for c in run_all(seed=0, full=True)}


@pytest.mark.parametrize("number", range(1, 13))
def test_criterion(checks, number, capsys):
    check = checks[number]
    with capsys.disabled():
        print("\n" + check.line())
    assert check.passed, check.line()
    if check.limit is not None:
        assert check.seconds <= check.limit
