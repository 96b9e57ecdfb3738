import time

import pytest

from portastat.cli import main
from portastat.pipeline import RunSettings, run_pipeline
from portastat.simulate import SimConfig

# (criterion number, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE = []

SMALL = dict(n_train_per_pop=300, n_val_per_pop=200, n_test_low=300, n_test_high=400, d_ehr=40, d_ekg=10)


@pytest.fixture(scope="session")
def small_config():
    return SimConfig(**SMALL)


@pytest.fixture(scope="session")
def small_run(small_config):
    return run_pipeline(small_config, RunSettings(seed=3, replicates=100))


@pytest.fixture(scope="session")
def default_run_dir(tmp_path_factory):
    """One full default ``run-all`` through the CLI, timed; shared by the slow tests."""
    out = tmp_path_factory.mktemp("default_run") / "run"
    start = time.perf_counter()
    code = main(["run-all", "--out", str(out), "--seed", "0", "--threads", "1"])
    elapsed = time.perf_counter() - start
    assert code == 0
    return out, elapsed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
