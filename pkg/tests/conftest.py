import numpy as np
import pytest

from miximpute.data_model import Dataset, VariableKind
from miximpute.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(20240101)


def make_two_component_data(seed=5, n=300, miss=0.25, kinds=None):
    """Well-separated two-component synthetic data with MAR missingness."""
    gen = RngStream(seed).gen
    z = gen.random(n) < 0.5
    x = gen.standard_normal((n, 1))
    ystar = np.where(z[:, None], 3.0 + x, -3.0 - x) + gen.standard_normal((n, 2))
    kinds = kinds or (VariableKind.continuous(), VariableKind.continuous())
    y = np.column_stack([kinds[k].to_response(ystar[:, k]) for k in range(2)])
    delta = (gen.random((n, 2)) > miss).astype(np.uint8)
    ymask = y.copy()
    ymask[delta == 0] = np.nan
    return Dataset(x=x, y=ymask, delta=delta, kinds=kinds), ystar, y


@pytest.fixture
def two_component_data():
    return make_two_component_data()[0]
