import numpy as np
import pytest

from tsdrots.cases import case2, case3par, case3ring, case4, case9mod
from tsdrots.config import RunConfig


def desk_cfg(**kw):
    """Desk-scale Big-M knobs (documented config override; library defaults
    stay at the published 1e7/1e8 values)."""
    base = dict(bigm_physical=150.0, bigm_dual=4e5, mip_gap=0.005)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture
def cfg():
    return desk_cfg()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def toy2():
    return case2()


@pytest.fixture(scope="session")
def toy3():
    return case3ring()


@pytest.fixture(scope="session")
def toy3par():
    return case3par()


@pytest.fixture(scope="session")
def toy4():
    return case4()


@pytest.fixture(scope="session")
def case9():
    return case9mod()
