import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_snapshot(k: int, dim: int, rng: np.random.Generator):
    """Raw per-client (thetas, grads, counts) for affinity tests."""
    thetas = rng.standard_normal((k, dim))
    grads = rng.standard_normal((k, dim))
    counts = rng.integers(1, 30, size=k)
    return thetas, grads, counts
