import contextlib
from pathlib import Path

import pytest

from attrctl.config import bundled_config, resolve_path
from attrctl.experiments import load_corpus

DATA = Path(__file__).parent / "data"

# criterion number -> (title, passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record the outcome of one acceptance criterion for the summary lines."""
    detail = {"text": ""}
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[number] = (title, False, detail["text"] or f"{type(exc).__name__}: {exc}".splitlines()[0])
        raise
    ACCEPTANCE[number] = (title, True, detail["text"])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def drafts() -> list[str]:
    return load_corpus(resolve_path("pkg:corpora/drafts.txt", Path(".")))


@pytest.fixture(scope="session")
def sweep_cfg():
    return bundled_config("sweep.json")


@pytest.fixture(scope="session")
def conflict_cfg():
    return bundled_config("conflict.json")


@pytest.fixture(scope="session")
def overlap_cfg():
    return bundled_config("overlap.json")
