import numpy as np
import pytest

from revcd.autodiff import check_finite


@pytest.fixture(autouse=True)
def finite_mode():
    """Every op asserts output finiteness while tests run."""
    with check_finite():
        yield


@pytest.fixture
def rng64():
    return np.random.default_rng(12345)
