import numpy as np
import pytest

from ppln.plf import SegmentSet, sizes_to_endpoints

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.failed:
        number, title = crit
        detail = dict(report.user_properties).get("detail", "")
        prev = _criteria.get(number)
        ok = report.passed and (prev is None or prev[1])
        _criteria[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, detail = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")


@pytest.fixture
def criterion(request):
    """Tag a test with its criterion and let it attach a one-line detail."""
    mark = request.node.get_closest_marker("criterion")
    request.node.user_properties.append(("criterion", tuple(mark.args)))

    def detail(text):
        request.node.user_properties.append(("detail", text))

    return detail


def random_theta(rng, n=None, min_size=0.02):
    n = int(rng.integers(1, 6)) if n is None else n
    sizes = min_size + (1 - n * min_size) * rng.dirichlet(np.ones(n))
    return SegmentSet(rng.normal(size=n), rng.normal(size=n), sizes_to_endpoints(sizes / sizes.sum()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
