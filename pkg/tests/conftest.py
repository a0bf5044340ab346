import numpy as np
import pytest

from evoset.core import PerformanceMatrix, PerformanceVector


def make_matrix(rows, instance_ids=None, heuristic_ids=None) -> PerformanceMatrix:
    """Build a matrix from a list of score rows; rows of all-inf become
    invalid sentinel vectors."""
    n = len(rows)
    m = len(rows[0])
    hids = tuple(heuristic_ids) if heuristic_ids else tuple(f"h{i}" for i in range(n))
    iids = tuple(instance_ids) if instance_ids else tuple(f"i{j}" for j in range(m))
    vecs = []
    for row in rows:
        row = tuple(float(x) for x in row)
        valid = all(np.isfinite(x) for x in row)
        vecs.append(PerformanceVector(scores=row, valid=valid))
    return PerformanceMatrix(hids, tuple(vecs), iids)


def random_matrix(rng: np.random.Generator, n_rows: int, m: int) -> PerformanceMatrix:
    return make_matrix(rng.uniform(0.0, 1.0, size=(n_rows, m)).tolist())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
