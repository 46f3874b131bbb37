"""Shared test plumbing: dataset discovery.

Data-dependent tests read the dataset directory from the environment
variable the package itself uses; this conftest fills in the sandbox
staging path as a default so a bare `pytest` works, and exposes a skip
marker for tests that cannot run without the real files.
"""

import os
from pathlib import Path

import pytest

from spikefhe.mnist import DATA_DIR_ENV

DEFAULT_DATA = Path("/root/data/mnist")

if DATA_DIR_ENV not in os.environ and DEFAULT_DATA.is_dir():
    os.environ[DATA_DIR_ENV] = str(DEFAULT_DATA)


def dataset_present() -> bool:
    root = os.environ.get(DATA_DIR_ENV)
    return bool(root) and (Path(root) / "train-images-idx3-ubyte").exists()


requires_dataset = pytest.mark.skipif(
    not dataset_present(),
    reason=f"MNIST files not found (set {DATA_DIR_ENV})",
)
