import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from altgdmin import generate_ground_truth, lrcs_measure, lrmc_sample, lrpr_measure

# acceptance results, filled by tests/test_acceptance.py and reported at the end of the run
ACCEPTANCE = {}


@pytest.fixture(autouse=True, scope="session")
def _single_blas_thread():
    with threadpool_limits(limits=1):
        yield


def dense_top_r(M, r):
    """Dense-SVD oracle for the top-r left singular subspace."""
    U, _, _ = np.linalg.svd(M, full_matrices=False)
    return U[:, :r]


def fd_check(f, grad, U, rng, directions=10, h=1e-4):
    """Central differences of f/2 against <grad, D>; returns the worst relative error."""
    worst = 0.0
    for _ in range(directions):
        D = rng.standard_normal(U.shape)
        num = (f(U + h * D) - f(U - h * D)) / (4 * h)
        ana = float(np.sum(grad * D))
        worst = max(worst, abs(num - ana) / max(abs(ana), 1e-12))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_lrcs():
    gt = generate_ground_truth(30, 40, 2, 1.2, seed=7)
    return gt, lrcs_measure(gt, 25, seed=8)


@pytest.fixture(scope="session")
def small_lrpr():
    gt = generate_ground_truth(20, 30, 2, 1.0, seed=7)
    return gt, lrpr_measure(gt, 60, seed=8)


@pytest.fixture(scope="session")
def small_lrmc():
    gt = generate_ground_truth(40, 36, 2, 1.2, seed=7)
    return gt, lrmc_sample(gt, 0.5, seed=8)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
