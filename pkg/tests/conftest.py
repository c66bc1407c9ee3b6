import pytest

from capora.corpus import default_toy_spec, generate_toy_corpus
from capora.oracle import prepare_dataset


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_toy_corpus(default_toy_spec())


@pytest.fixture(scope="session")
def toy_dataset(toy_corpus):
    return prepare_dataset(toy_corpus.records)


# criterion -> (passed, detail), filled by test_acceptance and printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
