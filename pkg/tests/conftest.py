from pathlib import Path

import numpy as np
import pytest

from qpflow.case_ingest import builtin_case, load_case
from qpflow.grid_model import build_specs, build_ybus
from qpflow.xbm import decompose

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def case14():
    return builtin_case("case14")


@pytest.fixture(scope="session")
def specs14(case14):
    return build_specs(case14)


@pytest.fixture(scope="session")
def decomp14(specs14):
    return decompose(specs14)


@pytest.fixture(scope="session")
def case2():
    return load_case(DATA / "case2.json")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(rng, n_qubits):
    amps = rng.normal(size=1 << n_qubits) + 1j * rng.normal(size=1 << n_qubits)
    return amps / np.linalg.norm(amps)


@pytest.fixture(scope="session")
def problem14(specs14, decomp14):
    from qpflow.solver import QpfProblem
    from qpflow.vqc import AnsatzConfig

    return QpfProblem(specs14, decomp14, AnsatzConfig(4, 3))


def dense_objective(specs, amps, alpha, b):
    """Sum of squared residuals of ``alpha <psi|H_s|psi>`` against ``b``, straight from the matrices."""
    f = np.einsum("i,sij,j->s", amps.conj(), specs.h, amps).real
    return float(np.sum((alpha * f - b) ** 2))


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line; all lines are repeated in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
