"""Every acceptance criterion at its stated tolerance; one PASS/FAIL line each (run with -s)."""

import pytest

from icc.checks import CHECKS


@pytest.mark.parametrize("key", list(CHECKS))
def test_criterion(key):
    res = CHECKS[key]()
    print(res.line())
    assert res.passed, res.line()
