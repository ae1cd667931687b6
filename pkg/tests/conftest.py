import sys


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for text in acceptance.format_results():
        terminalreporter.write_line(text)
    for n, reason in sorted(acceptance.KNOWN_RED.items()):
        if n in acceptance.RESULTS and not acceptance.RESULTS[n][0]:
            terminalreporter.write_line(f"  criterion {n} is a known red (strict xfail): {reason}")
