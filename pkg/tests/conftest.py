import helpers


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(helpers.ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(helpers.ACCEPTANCE[key])
