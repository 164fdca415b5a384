import numpy as np
import pytest

from helpers import build_assignments, gt_store, self_map


@pytest.fixture(scope="session")
def small_assignments():
    """3 pairs x 120 frames; enough structure for metric plumbing tests."""
    return build_assignments(3, 120, seed=11, lag=3)


@pytest.fixture(scope="session")
def small_map(small_assignments):
    return self_map(small_assignments)


@pytest.fixture(scope="session")
def small_gt(small_assignments):
    return gt_store(small_assignments)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
