import pytest

from tripleqa.data.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def make_synthetic(tmp_path_factory):
    """Generate (and cache per spec) a synthetic dataset; returns the jsonl path."""
    cache = {}

    def make(**kwargs):
        spec = SyntheticSpec(**kwargs)
        if spec not in cache:
            cache[spec] = generate_synthetic(spec, tmp_path_factory.mktemp("synth"))
        return cache[spec]

    return make


# Acceptance criteria record one verdict line each; they are printed together
# at the end of the session.
ACCEPTANCE: dict[int, str] = {}
N_CRITERIA = 12


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in range(1, N_CRITERIA + 1):
            terminalreporter.write_line(ACCEPTANCE.get(number, f"FAIL criterion {number:2d}: not run to completion in this session"))
