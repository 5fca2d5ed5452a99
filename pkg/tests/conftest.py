import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in range(1, 10):
        terminalreporter.write_line(module.RESULTS.get(criterion, f"criterion {criterion}: FAIL  (did not report)"))
