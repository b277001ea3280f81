import pytest

RESULTS_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[RESULTS_KEY] = {}


@pytest.fixture
def record_criterion(request):
    """Store ``(passed, detail)`` for an acceptance criterion; printed in the summary."""
    results = request.config.stash[RESULTS_KEY]

    def record(number: int, title: str, passed: bool, detail: str = ""):
        results[number] = (title, bool(passed), detail)
        print(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(RESULTS_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")
