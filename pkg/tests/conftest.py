import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report(request):
    """Print one acceptance line immediately and again in the end-of-run summary."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def _report(k, ok, detail, elapsed=None, budget=None):
        timing = "" if elapsed is None else f" [{elapsed:.1f}s / {budget}s]"
        line = f"[criterion {k}] {'PASS' if ok else 'FAIL'}: {detail}{timing}"
        _ACCEPTANCE_LINES.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]").split(",")[0])):
            terminalreporter.write_line(line)
