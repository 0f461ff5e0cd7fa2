import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config.addinivalue_line("markers", "slow: trains a model for several minutes")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _criteria.append((marker.args[0], marker.args[1], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, status, detail in sorted(_criteria):
        line = f"criterion {n} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach a short measurement string to the acceptance summary line."""
    def add(text: str) -> None:
        request.node.user_properties.append(("detail", text))
        print(text)
    return add
