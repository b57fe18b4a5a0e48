import pytest

from pharmonic_lab.grid import DISC, annulus_for, build_grid


@pytest.fixture(scope="session")
def disc08():
    return build_grid(DISC, 0.08)


@pytest.fixture(scope="session")
def disc04():
    return build_grid(DISC, 0.04)


@pytest.fixture(scope="session")
def disc02():
    return build_grid(DISC, 0.02)


@pytest.fixture(scope="session")
def ann2():
    return annulus_for(1e-2)
