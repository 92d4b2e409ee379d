import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from storyseg.core import Segmentation

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def boundary_sets(draw, n=None, min_n=1, max_n=12):
    """(story starts, n_shots) with starts[0] == 0."""
    if n is None:
        n = draw(st.integers(min_n, max_n))
    cuts = draw(st.sets(st.integers(1, max(1, n - 1)), max_size=n - 1)) if n > 1 else set()
    return [0, *sorted(cuts)], n


@st.composite
def segmentations(draw, n=None, min_n=1, max_n=12):
    starts, n = draw(boundary_sets(n=n, min_n=min_n, max_n=max_n))
    return Segmentation.from_boundaries(starts, n)


def random_starts(rng, n, k=None):
    """Random story starts; ``k`` stories if given, else any count."""
    if n == 1:
        return [0]
    if k is None:
        cuts = np.flatnonzero(rng.random(n - 1) < 0.4) + 1
    else:
        cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False))
    return [0, *map(int, cuts)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance report: one line per criterion after the run

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[name] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        outcome, detail = _ACCEPTANCE[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  {detail}".rstrip())
