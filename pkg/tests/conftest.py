from __future__ import annotations

import numpy as np
import pytest

from graphsched.graph import build_graph


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_graph(rng: np.random.Generator, n_max: int = 12, node_dim: int = 3, edge_dim: int = 2):
    n = int(rng.integers(1, n_max + 1))
    e = int(rng.integers(0, 3 * n + 1))
    return build_graph(
        rng.standard_normal((n, node_dim)),
        rng.integers(0, n, size=(2, e)),
        rng.standard_normal((e, edge_dim)),
    )


# one summary line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_makereport(item, call):
    if call.when != "call" or not item.name.startswith("test_A"):
        return
    crit = item.name.split("_")[1]
    detail = dict(item.user_properties).get("detail", "")
    _ACCEPTANCE[crit] = ("PASS" if call.excinfo is None else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        status, detail = _ACCEPTANCE[crit]
        terminalreporter.write_line(f"{crit} {status} {detail}".rstrip())
