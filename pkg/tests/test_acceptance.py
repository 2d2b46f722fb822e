"""The twelve acceptance criteria, one test each, at their stated tolerances.

Run standalone with ``python3 tests/test_acceptance.py`` or ``farsim selftest``.
"""

import pytest

from farsim.acceptance import CRITERIA, run_all

from conftest import ACCEPTANCE_LINES


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    c = CRITERIA[number]()
    ACCEPTANCE_LINES.append(c.line())
    print(c.line())
    assert c.number == number
    assert c.passed, c.line()


if __name__ == "__main__":
    raise SystemExit(0 if all(c.passed for c in run_all()) else 1)
