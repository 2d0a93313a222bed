import pytest


def pytest_addoption(parser):
    parser.addoption("--run-extended", action="store_true", default=False,
                     help="also run tests marked 'extended' (slow rate-trend experiments)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-extended"):
        return
    skip = pytest.mark.skip(reason="extended test; pass --run-extended to run it")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


CRITERIA = {}


@pytest.fixture
def report():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def _report(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        CRITERIA[number] = line
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
