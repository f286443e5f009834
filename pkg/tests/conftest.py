import numpy as np
import pytest

_CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:>2}: {status:<7} {detail}")


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the terminal summary."""

    class Recorder:
        def __call__(self, number, check, detail=""):
            """Run ``check``; a string it returns replaces ``detail``."""
            try:
                measured = check()
            except pytest.skip.Exception as exc:
                _CRITERIA.append((number, "SKIPPED", str(exc)))
                raise
            except BaseException as exc:
                first = (str(exc).splitlines() or [""])[0]
                _CRITERIA.append((number, "FAIL", f"{detail} {type(exc).__name__}: {first}".strip()))
                raise
            _CRITERIA.append((number, "PASS", measured if isinstance(measured, str) else detail))

    return Recorder()


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


REFERENCE_SEED = 2024


@pytest.fixture(scope="session")
def reference_runs():
    """Both simulation scenarios at 10,000/10,000 draws, tables only."""
    from extremize.experiments import ExperimentConfig, run_simulate

    return {
        name: run_simulate(ExperimentConfig(seed=REFERENCE_SEED, scenario=name, bootstrap_b=0))
        for name in ("no-overlap", "high-overlap")
    }
