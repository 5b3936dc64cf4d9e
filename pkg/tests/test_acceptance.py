"""The ten acceptance criteria, each at its stated tolerance.

Heavy simulation outputs are read from ``results/acceptance`` when present
(fill it with ``python scripts/run_acceptance.py``); otherwise they are
computed here, which takes on the order of an hour on one core.
"""

import warnings

import pytest

import acceptance_cases as ac


@pytest.mark.parametrize("criterion", ac.CRITERIA, ids=[f"criterion_{k}" for k in
                                                        range(1, len(ac.CRITERIA) + 1)])
def test_criterion(criterion, capsys):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        check = criterion()
    with capsys.disabled():
        print("\n" + check.line())
    assert check.passed, check.line()
