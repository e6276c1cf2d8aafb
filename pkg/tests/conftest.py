import numpy as np
import pytest
from hypothesis import strategies as st

from dilute_viscosity.tensor_core import sym_trace_free_project

_ACCEPTANCE = []


def random_strain(rng, unit=False):
    S = sym_trace_free_project(rng.standard_normal((3, 3)))
    if unit:
        S /= np.linalg.norm(S)
    return S


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
matrices = st.lists(finite, min_size=9, max_size=9).map(lambda v: np.array(v).reshape(3, 3))
strains = matrices.map(sym_trace_free_project)
directions = (
    st.lists(st.floats(-1, 1), min_size=3, max_size=3)
    .map(np.array)
    .filter(lambda v: np.linalg.norm(v) > 0.1)
    .map(lambda v: v / np.linalg.norm(v))
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def S_axial():
    return np.diag([1.0, -0.5, -0.5])


@pytest.fixture
def record_criterion():
    """Record ``(number, passed, detail)``; printed in the terminal summary."""

    def record(number, passed, detail):
        line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(line)
