import sys


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance lines together, one per criterion."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
