def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance criterion results after the run."""
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "REPORT_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
