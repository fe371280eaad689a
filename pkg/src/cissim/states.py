"""Initial density matrices after photo-induced electron transfer."""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .spinsys import SpinSystem, align_to_z, spin_operator, spin_rotation

UP = np.array([1.0, 0.0], dtype=complex)
DOWN = np.array([0.0, 1.0], dtype=complex)


class StateError(ValueError):
    pass


def _ket(*bits: str) -> np.ndarray:
    return reduce(np.kron, [UP if b == "u" else DOWN for b in bits])


SINGLET_KET = (_ket("u", "d") - _ket("d", "u")) / np.sqrt(2)
T0_KET = (_ket("u", "d") + _ket("d", "u")) / np.sqrt(2)
TPLUS_KET = _ket("u", "u")
TMINUS_KET = _ket("d", "d")


class RPState:
    """Base class of the radical-pair initial states."""

    kind = ""

    def density(self) -> np.ndarray:
        return rp_density(self)


@dataclass(frozen=True)
class Singlet(RPState):
    kind = "singlet"


@dataclass(frozen=True)
class Polarized(RPState):
    """Classical mixture of ``|up,down>`` and ``|down,up>`` with acceptor polarization ``p``."""

    p: float = 1.0
    kind = "polarized"

    def __post_init__(self):
        if not -1.0 <= self.p <= 1.0:
            raise StateError(f"polarization p must lie in [-1, 1], got {self.p}")


@dataclass(frozen=True)
class PsiU(RPState):
    """Unpolarized pure state from a coherent rotation of the transferred spin."""

    theta: float = 0.0
    phi: float = 0.0
    lam: float = 0.0
    kind = "psi_u"

    def __post_init__(self):
        for name in ("theta", "phi", "lam"):
            if not np.isfinite(getattr(self, name)):
                raise StateError(f"angle {name} must be finite")

    def ket(self) -> np.ndarray:
        th, ph, la = self.theta, self.phi, self.lam
        return (
            np.cos(th / 2) * (np.exp(1j * (la + ph)) * _ket("u", "d") - _ket("d", "u")) / np.sqrt(2)
            - np.sin(th / 2) * (np.exp(1j * la) * _ket("u", "u") + np.exp(1j * ph) * _ket("d", "d")) / np.sqrt(2)
        )


def rp_density(state: RPState) -> np.ndarray:
    """4x4 density matrix on donor x acceptor, quantized along the chiral axis."""
    if isinstance(state, Singlet):
        return np.outer(SINGLET_KET, SINGLET_KET.conj())
    if isinstance(state, Polarized):
        ud, du = _ket("u", "d"), _ket("d", "u")
        return (1 + state.p) / 2 * np.outer(ud, ud.conj()) + (1 - state.p) / 2 * np.outer(du, du.conj())
    if isinstance(state, PsiU):
        k = state.ket()
        return np.outer(k, k.conj())
    raise StateError(f"unknown radical-pair state {state!r}")


def psi_u_reduces_to_singlet_check(theta: float, phi: float, lam: float, tol: float = 1e-12) -> bool:
    overlap = abs(np.vdot(SINGLET_KET, PsiU(theta, phi, lam).ket())) ** 2
    return bool(abs(overlap - 1.0) < tol)


@dataclass(frozen=True)
class SensorState:
    """Initial state of the sensor qubit(s) and probe nuclei.

    ``qubit`` is ``"down"``, ``"mixed"`` or ``"thermal"`` (with ``p_up`` the
    excited population); ``nucleus`` is ``"up"``, ``"down"`` or ``"mixed"``.
    ``None`` means "not supplied": a present qubit then defaults to
    ``"down"`` and a present nucleus to ``"up"`` (its lower Zeeman level for a
    positive gyromagnetic ratio).
    """

    qubit: str | None = None
    p_up: float = 0.0
    nucleus: str | None = None

    def __post_init__(self):
        if self.qubit not in (None, "down", "mixed", "thermal"):
            raise StateError(f"unknown qubit state {self.qubit!r}")
        if self.nucleus not in (None, "up", "down", "mixed"):
            raise StateError(f"unknown nuclear state {self.nucleus!r}")
        if not 0.0 <= self.p_up <= 1.0:
            raise StateError(f"p_up must lie in [0, 1], got {self.p_up}")

    def qubit_density(self) -> np.ndarray:
        q = self.qubit or "down"
        if q == "down":
            return np.diag([0.0, 1.0]).astype(complex)
        if q == "mixed":
            return np.eye(2, dtype=complex) / 2
        return np.diag([self.p_up, 1.0 - self.p_up]).astype(complex)

    def nucleus_density(self) -> np.ndarray:
        n = self.nucleus or "up"
        if n == "up":
            return np.diag([1.0, 0.0]).astype(complex)
        if n == "down":
            return np.diag([0.0, 1.0]).astype(complex)
        return np.eye(2, dtype=complex) / 2


def molecular_frame_rp_density(rp: RPState, system: SpinSystem) -> np.ndarray:
    """Radical-pair density with its quantization axis along ``system.chiral_axis``."""
    rho = rp_density(rp)
    R = align_to_z(system.chiral_axis).T
    if np.allclose(R, np.eye(3)):
        return rho
    u = spin_rotation(R)
    U = np.kron(u, u)
    return U @ rho @ U.conj().T


def assemble_initial(rp: RPState, sensor: SensorState, system: SpinSystem) -> np.ndarray:
    """Full density matrix ``rho_RP x rho_Q x rho_nuc`` in the fixed basis order."""
    if len(system.centers) < 2:
        raise StateError("the system needs a donor and an acceptor center")
    n_qubits = len(system.centers) - 2
    if sensor.qubit is not None and n_qubits == 0:
        raise StateError("qubit state supplied but the system has no sensor qubit")
    if sensor.nucleus is not None and not system.nuclei:
        raise StateError("nuclear state supplied but the system has no nucleus")
    factors = [molecular_frame_rp_density(rp, system)]
    factors += [sensor.qubit_density()] * n_qubits
    factors += [sensor.nucleus_density()] * len(system.nuclei)
    return reduce(np.kron, factors)


def polarization(rho: np.ndarray, system: SpinSystem, site: str, axis=None) -> float:
    """``-2 Tr[rho S_n]`` for the site, with ``n`` the chiral axis by default."""
    n = system.chiral_axis if axis is None else axis
    return float(-2.0 * np.real(np.trace(rho @ spin_operator(system, site, n))))


def acceptor_polarization(rho: np.ndarray, system: SpinSystem) -> float:
    return polarization(rho, system, system.centers[1].label)
