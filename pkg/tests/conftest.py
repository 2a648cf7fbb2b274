import _support


def pytest_terminal_summary(terminalreporter):
    if not _support.ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _support.ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
