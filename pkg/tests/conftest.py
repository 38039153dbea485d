import numpy as np
import pytest

from afem.adaptivity import AdaptiveConfig, run_adaptive
from afem.fem import log_nonlinearity_problem, poisson_problem
from afem.mesh import make_initial_mesh, refine_uniform


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def square():
    return make_initial_mesh("unit_square")


@pytest.fixture(scope="session")
def square_fine():
    """Unit square after two uniform refinements (9 interior vertices)."""
    m = make_initial_mesh("unit_square")
    m, _ = refine_uniform(m)
    m, _ = refine_uniform(m)
    return m


@pytest.fixture(scope="session")
def lin():
    return poisson_problem(1.0)


@pytest.fixture(scope="session")
def nl():
    return log_nonlinearity_problem(1.0)


@pytest.fixture(scope="session")
def l_history(lin):
    """Small adaptive Poisson run on the L-shape with all meshes kept."""
    return run_adaptive(lin, "l_shape", AdaptiveConfig(theta=0.5, lambda_ctr=1e-2,
                                                      max_dofs=3000, keep_history=True))


@pytest.fixture(scope="session")
def l_history_nl(nl):
    return run_adaptive(nl, "l_shape", AdaptiveConfig(theta=0.5, lambda_ctr=1e-2,
                                                     max_dofs=2000, keep_history=True))


# acceptance criteria report: criterion number -> (passed, detail)
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")
