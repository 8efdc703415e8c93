import os
from pathlib import Path

import numpy as np
import pytest

from manager import DatasetManager
from models.dataset import Dataset, DesignMatrix
from posterior import build_posterior
from priors import UniformPrior


def optional_dataset(name: str) -> Dataset:
    """Loads a non-bundled dataset from METATRACE_DATA_DIR or skips the test."""
    data_dir = os.getenv("METATRACE_DATA_DIR")
    if not data_dir or not (Path(data_dir) / f"{name}.csv").exists():
        pytest.skip(f"{name}.csv not found in METATRACE_DATA_DIR")
    return DatasetManager(data_dir).load(name)


@pytest.fixture(scope="session")
def sat() -> Dataset:
    return DatasetManager().load("sat")


@pytest.fixture(scope="session")
def aspirin() -> Dataset:
    return DatasetManager().load("aspirin")


@pytest.fixture
def toy2() -> Dataset:
    return Dataset(labels=("a", "b"), y=[0.0, 2.0], s=[1.0, 1.0])


@pytest.fixture
def toy3() -> Dataset:
    return Dataset(labels=("a", "b", "c"), y=[-1.0, 0.0, 1.0], s=[1.0, 1.0, 1.0])


@pytest.fixture
def grouped() -> Dataset:
    """Six studies in two subgroups marked by a binary covariate."""
    return Dataset(
        labels=("s1", "s2", "s3", "s4", "s5", "s6"),
        y=[0.1, 0.3, 0.2, 0.6, 0.4, 0.7],
        s=[0.1, 0.15, 0.2, 0.1, 0.2, 0.15],
        covariates={"x": np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])},
    )


@pytest.fixture(scope="session")
def sat_posterior(sat):
    return build_posterior(sat, DesignMatrix.intercept_only(sat.k), UniformPrior())
