import time

import pytest

from genretrans.synthetic import make_synthetic

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def synthetic_grid():
    """The full learning-curve grid on the 60/40/20,000 synthetic corpus."""
    from genretrans.evaluation import run_experiment

    setup = make_synthetic(n_sources=60, n_targets=40, n_items=20_000, seed=0)
    start = time.perf_counter()
    reports = run_experiment(
        setup.corpus, methods=("KB", "ML", "MAP", "MAP-nobias"), k=4, seed=0, kb_table=setup.kb_table
    )
    return setup, reports, time.perf_counter() - start


@pytest.fixture
def criterion(request):
    """Collects a one-line detail string for the acceptance summary."""
    notes = []
    request.node._criterion_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    label = marker.args[0]
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    detail = "; ".join(getattr(item, "_criterion_notes", []))
    _ACCEPTANCE[label] = (status, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0])):
        status, detail = _ACCEPTANCE[label]
        line = f"{status} criterion {label}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
