import numpy as np
import pytest

from floodgtn.data import sliding_windows
from floodgtn.graph import build_graph, default_topology
from floodgtn.hydrology import generate, load_scenario


@pytest.fixture(scope="session")
def graph():
    return default_topology()


@pytest.fixture(scope="session")
def small_frame():
    """600 simulated hours of the default scenario."""
    return generate(load_scenario("default", duration=600))


@pytest.fixture(scope="session")
def small_windows(small_frame, graph):
    return sliding_windows(small_frame, 72, 24, graph)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def path_graph(n=3):
    """Stations S1 - S2 - ... - Sn in a line, all targets."""
    ids = [f"S{i + 1}" for i in range(n)]
    return build_graph({
        "nodes": [{"id": i, "kind": "water-level-station"} for i in ids],
        "edges": [[a, b] for a, b in zip(ids, ids[1:])],
        "targets": ids,
    })


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.failed and number not in _CRITERIA):
        _CRITERIA[number] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}".rstrip())
