import os
from pathlib import Path

import numpy as np
import pytest

from fedadp.nn import ModelParams, init_params

MNIST_DIR = Path(os.environ.get("FEDADP_MNIST_DIR", "/root/data/mnist"))
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


def mnist_available() -> bool:
    return all((MNIST_DIR / f).is_file() for f in MNIST_FILES)


needs_mnist = pytest.mark.skipif(not mnist_available(), reason=f"MNIST IDX files not found in {MNIST_DIR}")


def random_params(sizes, rng, scale=1.0) -> ModelParams:
    return ModelParams(tuple((scale * rng.standard_normal((a, b)), scale * rng.standard_normal(b))
                             for a, b in zip(sizes[:-1], sizes[1:])))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    from fedadp.data import load_idx
    return load_idx(MNIST_DIR / MNIST_FILES[0], MNIST_DIR / MNIST_FILES[1])


@pytest.fixture
def small_params(rng):
    return init_params([8, 5, 3], rng)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
