import numpy as np
import pytest

from cissim.constants import G_E
from cissim.spinsys import SpinCenter, SpinSystem, dipolar_couplings

G_D, G_A = G_E - 0.001, G_E + 0.001
G_Q = np.diag([1.98, 1.98, 1.96])


def make_dqa(nuclei=()):
    centers = (
        SpinCenter("D", G_D, [0, 0, 0]),
        SpinCenter("A", G_A, [0, 0, 25]),
        SpinCenter("Q", G_Q, [0, 0, 33]),
    )
    return SpinSystem(centers, tuple(nuclei), dipolar_couplings(centers, [("D", "A"), ("A", "Q")]))


def make_da():
    centers = (SpinCenter("D", G_D, [0, 0, 0]), SpinCenter("A", G_A, [0, 0, 25]))
    return SpinSystem(centers, (), dipolar_couplings(centers, [("D", "A")]))


def single(g=G_E, label="S"):
    return SpinSystem((SpinCenter(label, g, [0, 0, 0]),))


@pytest.fixture
def dqa():
    return make_dqa()


@pytest.fixture
def da():
    return make_da()


def random_density(rng, d):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = X @ X.conj().T
    return rho / np.trace(rho)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"{criterion}: {'PASS' if ok else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'} | {detail}")
