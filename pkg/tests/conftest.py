import math

import numpy as np
import pytest

from roacert.dynamics import OracleConfig, VectorField
from roacert.polyalg import Poly


def variables(n):
    return [Poly.variable(i, n) for i in range(n)]


def scalar_field():
    (x,) = variables(1)
    return VectorField([-x + x**3])


def vanderpol_field():
    x1, x2 = variables(2)
    return VectorField([-x2, x1 - x2 * (1 - x1**2)])


def servo_field():
    x1, x2, x3 = variables(3)
    return VectorField([x2, x3, -x3 - (1 - x1**2) * x2 - x1])


VDP_R = math.hypot(2.0, 2.7)
VDP_BOX = ((-2.0, 2.0), (-2.7, 2.7))


@pytest.fixture
def scalar():
    return scalar_field()


@pytest.fixture
def vdp():
    return vanderpol_field()


@pytest.fixture
def servo():
    return servo_field()


@pytest.fixture
def cfg():
    return OracleConfig(R_escape=15.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
