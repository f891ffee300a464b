import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import write_cornell_fixture, write_jacquard_fixture


@pytest.fixture(scope="session")
def cornell_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cornell")
    write_cornell_fixture(root, n_samples=8, seed=3)
    return root


@pytest.fixture(scope="session")
def jacquard_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("jacquard")
    write_jacquard_fixture(root, n_samples=6, seed=5)
    return root


@pytest.fixture(scope="session")
def cornell_samples(cornell_root):
    from gaussgrasp.dataset import parse_cornell

    return parse_cornell(cornell_root)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
