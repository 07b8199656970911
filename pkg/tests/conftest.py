import numpy as np
import pytest

from brinkman_hdiv.mesh import build_rect_mesh
from brinkman_hdiv.problem import write_synthetic_spe10
from brinkman_hdiv.spaces import FamilyOrder


@pytest.fixture
def bdm():
    return FamilyOrder("bdm", 1)


@pytest.fixture
def rt():
    return FamilyOrder("rt", 1)


@pytest.fixture
def square2():
    return build_rect_mesh(2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def spe10_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("spe10") / "spe_perm.dat"
    return str(write_synthetic_spe10(path, seed=0))


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def criterion():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion (echoed in the terminal summary)."""
    def record(number, passed, detail):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'} {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
