from helpers import ACCEPTANCE, CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in CRITERIA:
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} ({detail})")
        else:
            terminalreporter.write_line(f"CRITERION {k}: NOT RUN")
