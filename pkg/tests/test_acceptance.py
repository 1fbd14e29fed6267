"""Acceptance criteria A1-A11, one test each, at the stated tolerances.

Every result line is printed as it is produced and again in the terminal summary.
"""

import pytest

from hjgraph import acceptance

RESULTS: dict = {}


def result(cid):
    if cid not in RESULTS:
        for r in acceptance.run_criterion(cid):
            RESULTS[r.id] = r
    r = RESULTS[cid]
    print(r.line())
    return r


@pytest.mark.parametrize("cid", acceptance.SELECTORS["all"])
def test_criterion(cid):
    r = result(cid)
    assert r.verdict, r.line()
