import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape, scale=1.0, shift=0.0):
    """Random requires-grad tensor, values shift +- scale."""
    from crackseg.autodiff import Tensor
    return Tensor(shift + scale * rng.standard_normal(shape), requires_grad=True)
