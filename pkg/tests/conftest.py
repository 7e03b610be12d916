import pytest

from helpers import Solved, solve_bundled


@pytest.fixture(scope="session")
def cs1() -> Solved:
    return solve_bundled("case_study_1")


@pytest.fixture(scope="session")
def cs2() -> Solved:
    return solve_bundled("case_study_2")
