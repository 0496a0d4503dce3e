import os
import tracemalloc
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("LEA_MVD_DATA_DIR", REPO / "data" / "mnist"))


def have_mnist() -> bool:
    return (DATA_DIR / "train-images-idx3-ubyte.gz").exists() or (
        DATA_DIR / "train-images-idx3-ubyte"
    ).exists()


needs_mnist = pytest.mark.skipif(not have_mnist(), reason=f"MNIST not found in {DATA_DIR}")


@pytest.fixture(scope="session")
def mnist_train():
    if not have_mnist():
        pytest.skip(f"MNIST not found in {DATA_DIR}")
    from leamvd import dataio

    images, _ = dataio.find_split(DATA_DIR, "train")
    return dataio.binarize(dataio.load_idx(images))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def peak_bytes(fn, *args, **kwargs):
    """Peak traced allocation (bytes above the starting level) while ``fn`` runs."""
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base = tracemalloc.get_traced_memory()[0]
    try:
        result = fn(*args, **kwargs)
        peak = tracemalloc.get_traced_memory()[1] - base
    finally:
        if not was_tracing:
            tracemalloc.stop()
    return peak, result


ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(name: str, passed: bool, detail: str = "") -> None:
    """Log one acceptance verdict; the lines are printed in the terminal summary."""
    ACCEPTANCE.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
