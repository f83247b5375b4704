import pytest

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, title, passed, detail)``."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA[number] = (title, bool(passed), detail)
        return passed

    return record


@pytest.fixture(scope="session")
def experiment(request):
    """Desk-scale run of the default config; trained checkpoints persist in the pytest cache."""
    from inflight.config import RunConfig
    from inflight.pipeline import run_experiment

    cache = request.config.cache.mkdir("inflight-models")
    cfg = RunConfig()
    return cfg, run_experiment(cfg, cache_dir=cache)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        line = f"[{'PASS' if ok else 'FAIL'}] {n}. {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
