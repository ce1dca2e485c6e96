import numpy as np
import pytest

from cardlearn import oracle
from cardlearn.query import Predicate, Query


def chain_query(tables, group_col="x", preds=()):
    """Aliases a0..an over ``tables`` joined in a path on ``group_col``."""
    refs = {f"a{i}": t for i, t in enumerate(tables)}
    joins = tuple(((f"a{i}", group_col), (f"a{i + 1}", group_col)) for i in range(len(tables) - 1))
    return Query(refs, joins, tuple(preds))


@pytest.fixture(scope="session")
def toy():
    return oracle.toy_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def P(alias, col, op, value=None):
    return Predicate(alias, col, op, value)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
