import numpy as np
import pytest

from ipla_lab import GaussianHierarchicalParams, ModelSpec, make_gaussian_model


def quadratic_model(H, name="quadratic"):
    """U(v) = v^T H v / 2 on v = (theta, x) with theta and x scalars."""
    H = np.asarray(H, dtype=float)

    def eval_U(theta, x):
        v = np.concatenate([theta, x], axis=-1)
        return 0.5 * np.einsum("...i,ij,...j->...", v, H, v)

    def grad_theta_U(theta, x):
        return H[0, 0] * theta + H[0, 1] * x

    def grad_x_U(theta, x):
        return H[1, 0] * theta + H[1, 1] * x

    return ModelSpec(1, 1, eval_U, grad_theta_U, grad_x_U, name=name)


@pytest.fixture
def toy():
    return make_gaussian_model(GaussianHierarchicalParams([0.0]))


@pytest.fixture
def toy_params():
    return GaussianHierarchicalParams([0.0])


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion (printed in the terminal summary)."""

    def _report(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
