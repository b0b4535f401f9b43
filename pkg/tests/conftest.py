import numpy as np
import pytest

from ndl.numkernel import make_rng

# criterion id -> (passed, detail); filled by tests in test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}

ACCEPTANCE_TITLES = {
    1: "gradient correctness",
    2: "cholesky and sampling",
    3: "frozen features and budgets",
    4: "novel-class representation gap",
    5: "neurogenesis round on class 0",
    6: "stability-plasticity ordering",
    7: "growth-curve shape",
    8: "determinism and resume",
    9: "IDX conformance",
}


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def record_acceptance():
    def record(criterion: int, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_TITLES):
        if cid not in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"criterion {cid} ({ACCEPTANCE_TITLES[cid]}): NOT RUN")
            continue
        passed, detail = ACCEPTANCE_RESULTS[cid]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {cid} ({ACCEPTANCE_TITLES[cid]}): {status}  {detail}")


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * 1e-3 * np.eye(n)
