import os
from pathlib import Path

import numpy as np
import pytest

from qrfx.dataset import write_csv
from qrfx.synthetic import synthetic_longjump, synthetic_regression

ROOT = Path(__file__).resolve().parents[1]

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def data_dir() -> Path | None:
    raw = os.environ.get("QRFX_DATA_DIR")
    if not raw:
        return None
    p = Path(raw)
    return p if (p / "men.csv").is_file() and (p / "women.csv").is_file() else None


@pytest.fixture(scope="session")
def syn_dataset():
    return synthetic_longjump(seed=11, missing="light")


@pytest.fixture(scope="session")
def syn_csv(tmp_path_factory, syn_dataset):
    path = tmp_path_factory.mktemp("syn") / "syn.csv"
    write_csv(syn_dataset, path)
    return path


@pytest.fixture(scope="session")
def small_regression():
    X, y, names = synthetic_regression(n=40, p=5, seed=3)
    return X, y, names


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")


@pytest.fixture(scope="session")
def fixture_runs(tmp_path_factory):
    """Two full default-config runs on the bundled fixture: 1 thread and 8 threads."""
    from qrfx.dataset import fixture_path
    from qrfx.pipeline import PipelineConfig, reproduce

    base = tmp_path_factory.mktemp("runs")
    outs = []
    for threads in (1, 8):
        cfg = PipelineConfig(input=str(fixture_path()), seed=7, out=str(base / f"t{threads}"), threads=threads)
        outs.append(reproduce(cfg))
    return outs
