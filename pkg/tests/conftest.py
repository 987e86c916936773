import numpy as np
import pytest

from cpdnet.data import synthetic_squares, write_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def squares():
    return synthetic_squares(4, 32, seed=0)


@pytest.fixture
def dataset_dir(tmp_path, squares):
    root = tmp_path / "ds"
    write_dataset(root, squares, "train")
    write_dataset(root, squares, "test")
    return root
