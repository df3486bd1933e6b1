import numpy as np
import pytest

from georabi.deltawell import DeltaWellPotential, as_model, depth_ellipse

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def standard_well():
    return DeltaWellPotential.standard()


@pytest.fixture(scope="session")
def well_ellipse(standard_well):
    """(model, one-cycle path) for the standard well and preset ellipse at Ω = 2e-3."""
    return as_model(standard_well, depth_ellipse(standard_well, omega=2e-3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    doc = getattr(report, "criterion", None)
    if doc is None:
        return
    ACCEPTANCE[report.nodeid] = (doc, report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = marker.args


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, text), outcome in sorted(ACCEPTANCE.values(), key=lambda v: v[0][0]):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {text}")
