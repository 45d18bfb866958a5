import numpy as np
import pytest

from unitreg.data_io import Dataset

ACCEPTANCE_LINES = {}


def record_acceptance(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def make_101(seed=0, ones=4, n_pred=3):
    """101 rows: ``ones`` exact ones, the rest interior."""
    r = np.random.default_rng(seed)
    N = 101
    X = r.normal(size=(N, n_pred))
    y = r.beta(8.0, 1.5, size=N)
    y[:ones] = 1.0
    return Dataset.from_arrays(y, X, [f"x{j + 1}" for j in range(n_pred)])


@pytest.fixture
def data101():
    return make_101()


def single_endpoint_data(seed, N=200, endpoint=1.0, share=0.1):
    """Synthetic data with one endpoint class whose rate depends on x."""
    r = np.random.default_rng(seed)
    X = r.normal(size=(N, 3))
    mu = 1.0 / (1.0 + np.exp(-(0.8 + 0.4 * X[:, 0] - 0.3 * X[:, 1])))
    y = r.beta(mu * 20.0, (1.0 - mu) * 20.0)
    p_end = 1.0 / (1.0 + np.exp(-(np.log(share / (1 - share)) + 0.5 * X[:, 2])))
    y = np.where(r.random(N) < p_end, endpoint, y)
    y = np.clip(y, 1e-12, 1 - 1e-12) if endpoint is None else y
    return Dataset.from_arrays(y, X, ["x1", "x2", "x3"])
