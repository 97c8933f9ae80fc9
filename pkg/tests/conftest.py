import numpy as np
import pytest

from crocco_split.geometry import Domain2D, GridSpec, build_grid


@pytest.fixture
def unit_square():
    return Domain2D.rectangle(0.0, 1.0, 0.0, 1.0)


def square_grid(n=8, nz=8, T=1.0, n_split=2, k=None):
    d = Domain2D.rectangle(0.0, 1.0, 0.0, 1.0)
    return build_grid(d, GridSpec(n, n, nz, T, n_split), k=k)


def const(c):
    return lambda *a: np.full(np.broadcast(*[np.asarray(v) for v in a]).shape, float(c))
