import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crowdauction.allocation import AuctionInstance
from crowdauction.distributions import DEFAULT_BIDS

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_instance(rng, n=None, k=2.0, rho=None, dist=DEFAULT_BIDS, n_range=(2, 10)):
    """Instance drawn like the Monte Carlo populations: log-normal bids and capacities."""
    n = int(rng.integers(n_range[0], n_range[1] + 1)) if n is None else n
    bids = dist.sample(rng, n)
    caps = 100.0 * rng.lognormal(0.0, 0.3, n)
    rho = rng.uniform(0.05, 0.95) if rho is None else rho
    c = rho * caps.sum()
    return AuctionInstance.from_bids(bids, caps, k, c, dist)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion in the terminal summary

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (report.when == "call" or report.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    previous = _CRITERIA.get(number, (title, True, ""))
    _CRITERIA[number] = (title, previous[1] and report.passed, detail or previous[2])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
