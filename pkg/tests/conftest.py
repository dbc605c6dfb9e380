def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, 11):
        line = mod.RESULTS.get(num, f"criterion {num:2d} FAIL  did not complete")
        terminalreporter.write_line(line)
