import pathlib
import re

import numpy as np
import pytest

from mpfrnn.archspec import parse_spec

ROOT = pathlib.Path(__file__).resolve().parents[1]
ARCHS = ROOT / "archs"

_criteria = {}


def load_arch(name):
    return parse_spec((ARCHS / name).read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.failed or report.skipped:
        if report.failed:
            _criteria[key] = "FAIL"
        elif report.skipped:
            _criteria.setdefault(key, "SKIP")
        else:
            _criteria.setdefault(key, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), status in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {num} {name.replace('_', ' ')}: {status}")
