import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))

from microfbi import functionals, phase  # noqa: E402

CONFIGS = os.path.join(ROOT, "configs")

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    n = dict(report.user_properties).get("criterion")
    if n is None:
        return
    detail = dict(report.user_properties).get("detail", "")
    ok = report.passed
    prev = _criteria.get(n)
    if prev is None:
        _criteria[n] = [ok, [detail] if detail else []]
    else:
        prev[0] = prev[0] and ok
        if detail:
            prev[1].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, details = _criteria[n]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}"
        if details:
            line += "  (" + "; ".join(details) + ")"
        terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """record(n, detail) tags the running test with an acceptance criterion."""
    def _rec(n, detail=""):
        props = request.node.user_properties
        props[:] = [(k, v) for k, v in props if k not in ("criterion", "detail")]
        props.append(("criterion", n))
        if detail:
            props.append(("detail", detail))
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        _rec(m.args[0])
    return _rec


@pytest.fixture(scope="session")
def p1():
    return phase.square_phase(1)


@pytest.fixture(scope="session")
def p2():
    return phase.square_phase(2)


@pytest.fixture(scope="session")
def delta0():
    return functionals.from_descriptor({"variant": "points", "atoms": [{"x": [0.0]}]})


@pytest.fixture(scope="session")
def box1():
    return functionals.from_descriptor({"variant": "density", "support": [[-1, 1]],
                                        "profile": {"kind": "const", "value": 1}})
