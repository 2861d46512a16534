import numpy as np
import pytest

from ddlmpc.bench import make_instance
from ddlmpc.localsls import build_local_programs


@pytest.fixture(scope="session")
def inst5():
    """Pinned 5-node chain with data long enough for d in {1, 2}."""
    return make_instance(5, 0, 3, d_values=(1, 2), need_global=True)


@pytest.fixture(scope="session")
def inst8():
    return make_instance(8, 4, 5, d_values=(2,), need_global=True)


@pytest.fixture(scope="session")
def programs5(inst5):
    return build_local_programs(inst5.data, 1, inst5.horizon)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
