import numpy as np
import pytest
import scipy.sparse as sp

from hybridcnot.device import Channel, HamiltonianGenerator, table1_params


@pytest.fixture(scope="session")
def params():
    return table1_params()


def static_generator(matrix, dims):
    """Time-independent generator built from an explicit matrix."""
    return HamiltonianGenerator(dims, sp.csr_matrix(matrix, dtype=complex), [], "custom", "lab")


def zero_generator(dims):
    d = int(np.prod(dims))
    return static_generator(sp.csr_matrix((d, d)), dims)


def channel(rate, op, label=""):
    return Channel(rate, op, label)


_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
