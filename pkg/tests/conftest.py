import numpy as np
import pytest

from normbounds.bounds import envelope_from_polynomial
from normbounds.linear_analysis import Normalization, compute_fundamental
from normbounds.pipeline import figure_spec
from normbounds.system_model import MatrixFunctionSpec, PolynomialVectorField, QuasiPeriodicScalar, SystemSpec, ZERO


def constant_linear_spec(a, forcing=None):
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    entries = tuple(tuple(QuasiPeriodicScalar(float(a[i, j])) for j in range(n)) for i in range(n))
    forcing = forcing or (ZERO,) * n
    return SystemSpec(MatrixFunctionSpec(entries), PolynomialVectorField(n, ()), tuple(forcing))


class Benchmark:
    def __init__(self, name, t_end):
        self.name = name
        self.spec = figure_spec(name)
        self.fd = compute_fundamental(self.spec, Normalization.FROZEN_REFERENCE, t_end)
        self.L = envelope_from_polynomial(self.spec.nonlinear)
        self.F = self.spec.forcing_norm()


@pytest.fixture(scope="session")
def fig21():
    return Benchmark("fig2.1", 100.0)


@pytest.fixture(scope="session")
def fig22():
    return Benchmark("fig2.2", 100.0)


@pytest.fixture(scope="session")
def fig31():
    return Benchmark("fig3.1", 200.0)


@pytest.fixture(scope="session")
def fig32():
    return Benchmark("fig3.2", 200.0)


@pytest.fixture(scope="session")
def fig33():
    return Benchmark("fig3.3", 200.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
