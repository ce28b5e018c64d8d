import pytest

from support import CONTRAST, make_problem


@pytest.fixture(scope="session")
def scalar_2x2():
    """2D scalar uniform problem, 4x4 elements on 2x2 subdomains."""
    return make_problem()


@pytest.fixture(scope="session")
def scalar_2x2_checker():
    """Same partition with a 1e5 coefficient jump across every interface."""
    return make_problem(material=CONTRAST)


@pytest.fixture(scope="session")
def elastic_2x2():
    """2D elasticity, 8x8 elements on 2x2 subdomains (two floating blocks)."""
    return make_problem(physics="elasticity", elements=8)
