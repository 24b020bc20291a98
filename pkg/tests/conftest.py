import os
from pathlib import Path

import numpy as np
import pytest

from arm_recall.data import load_idx

_CANDIDATES = [os.environ.get("ARM_MNIST_DIR"), Path(__file__).resolve().parents[1] / "data" / "mnist",
               "/root/data/mnist"]
_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_dir():
    for c in _CANDIDATES:
        if c and all((Path(c) / f).is_file() for f in _FILES):
            return Path(c)
    return None


@pytest.fixture(scope="session")
def mnist():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found (set ARM_MNIST_DIR)")
    source = load_idx(d / _FILES[0], d / _FILES[1])
    test = load_idx(d / _FILES[2], d / _FILES[3])
    return source, test


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = ("PASS" if passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {detail}")
