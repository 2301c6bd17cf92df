import numpy as np
import pytest

from stinr.data import STSlice, SyntheticParams, generate_synthetic


@pytest.fixture(scope="session")
def small_slice() -> STSlice:
    """300-spot / 120-gene synthetic slice shared by training tests."""
    params = SyntheticParams(
        n_spots=300, n_genes=120, n_types=4, target_sparsity=0.9,
        signature_genes_per_type=15, seed=11,
    )
    return generate_synthetic(params)


@pytest.fixture()
def tiny_slice() -> STSlice:
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    expr = np.array([[1.0, 0.0, 2.0, 0.0], [0.0, 3.0, 0.0, 0.0], [4.0, 0.0, 0.0, 5.0]])
    return STSlice(coords, expr, ("a", "b", "c", "d"), ("t0", "t0", "t1"))
