"""The twelve acceptance criteria, one test each, at their stated tolerances.

Each result line is printed in the terminal summary (see conftest.py). The
module also runs standalone: ``python3 tests/test_acceptance.py``.
"""

import sys

import pytest

from periodic_execution.verification import acceptance_checks

SEED = 0
CHECKS = acceptance_checks(SEED)
RESULTS = {}


@pytest.mark.parametrize("key", range(1, len(CHECKS) + 1))
def test_criterion(key):
    r = CHECKS[key - 1]()
    assert r.key == key
    RESULTS[key] = r
    print(r.line())
    assert r.passed, r.line()


if __name__ == "__main__":
    results = [check() for check in CHECKS]
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
