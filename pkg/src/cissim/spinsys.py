"""Spin systems, spin operators and static Hamiltonians.

The Hilbert space is the tensor product of all sites in the fixed order
``centers[0] (donor) x centers[1] (acceptor) x centers[2:] (sensors) x nuclei``;
every site is a spin 1/2 with local basis ``(|up>, |down>)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .constants import DIPOLAR_MHZ_A3, MU_B_MHZ_PER_T

MAX_DIMENSION = 64
G_BOUNDS = (1.5, 2.5)
MIN_DISTANCE_A = 1.0


class SpinSystemError(ValueError):
    pass


class DegenerateGeometryError(SpinSystemError):
    pass


def _as_g_tensor(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g = g * np.eye(3)
    elif g.shape == (3,):
        g = np.diag(g)
    if g.shape != (3, 3):
        raise SpinSystemError(f"g tensor must be scalar, 3-vector or 3x3, got shape {g.shape}")
    return g


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpinCenter:
    """Electron spin-1/2 center with a g tensor and a position in angstrom.

    ``g_tensor`` accepts a scalar (isotropic), the three principal values, or
    a full symmetric 3x3 matrix. Pass ``check_g=False`` to skip the principal
    value sanity range.
    """

    label: str
    g_tensor: np.ndarray
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spin: float = 0.5
    check_g: bool = True

    def __post_init__(self):
        g = _as_g_tensor(self.g_tensor)
        if not np.allclose(g, g.T, atol=1e-12):
            raise SpinSystemError(f"g tensor of {self.label!r} is not symmetric")
        if self.check_g:
            principal = np.linalg.eigvalsh(g)
            lo, hi = G_BOUNDS
            if principal.min() < lo or principal.max() > hi:
                raise SpinSystemError(
                    f"g principal values of {self.label!r} outside [{lo}, {hi}]: {principal}"
                )
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise SpinSystemError(f"position of {self.label!r} must be a finite 3-vector")
        if self.spin != 0.5:
            raise SpinSystemError("only spin-1/2 centers are supported")
        object.__setattr__(self, "g_tensor", _frozen(g))
        object.__setattr__(self, "position", _frozen(pos))

    def __eq__(self, other):
        if not isinstance(other, SpinCenter):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.g_tensor, other.g_tensor)
            and np.array_equal(self.position, other.position)
        )

    __hash__ = None


@dataclass(frozen=True)
class NuclearSpin:
    """Spin-1/2 nucleus with isotropic hyperfine coupling to one center."""

    label: str
    larmor_MHz_per_T: float
    hyperfine_A_MHz: float
    attached_to: str
    spin: float = 0.5

    def __post_init__(self):
        if not self.larmor_MHz_per_T > 0:
            raise SpinSystemError(f"nucleus {self.label!r}: larmor_MHz_per_T must be > 0")
        if self.spin != 0.5:
            raise SpinSystemError("only spin-1/2 nuclei are supported")


@dataclass(frozen=True, eq=False)
class CouplingTensor:
    """Bilinear coupling ``S_i . J . S_j`` in MHz between two centers."""

    pair: tuple[str, str]
    J: np.ndarray

    def __post_init__(self):
        pair = tuple(self.pair)
        if len(pair) != 2 or pair[0] == pair[1]:
            raise SpinSystemError(f"coupling pair must name two distinct centers, got {pair}")
        J = np.asarray(self.J, dtype=float)
        if J.shape != (3, 3):
            raise SpinSystemError("coupling tensor must be 3x3")
        object.__setattr__(self, "pair", pair)
        object.__setattr__(self, "J", _frozen(J))

    def __eq__(self, other):
        if not isinstance(other, CouplingTensor):
            return NotImplemented
        return self.pair == other.pair and np.array_equal(self.J, other.J)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Electron centers, probe nuclei and their couplings.

    The first two centers form the radical pair (donor, acceptor); further
    centers are sensor qubits. ``chiral_axis`` is a unit vector in the
    molecular frame.
    """

    centers: tuple[SpinCenter, ...]
    nuclei: tuple[NuclearSpin, ...] = ()
    couplings: tuple[CouplingTensor, ...] = ()
    chiral_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        centers = tuple(self.centers)
        nuclei = tuple(self.nuclei)
        couplings = tuple(self.couplings)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "nuclei", nuclei)
        object.__setattr__(self, "couplings", couplings)

        labels = [c.label for c in centers] + [n.label for n in nuclei]
        if len(set(labels)) != len(labels):
            raise SpinSystemError(f"site labels must be unique, got {labels}")
        if len(centers) < 1:
            raise SpinSystemError("at least one electron center is required")
        if 2 ** len(labels) > MAX_DIMENSION:
            raise SpinSystemError(
                f"Hilbert dimension 2**{len(labels)} exceeds the guard of {MAX_DIMENSION}"
            )
        center_labels = {c.label for c in centers}
        for a in range(len(centers)):
            for b in range(a + 1, len(centers)):
                d = np.linalg.norm(centers[a].position - centers[b].position)
                if d < MIN_DISTANCE_A:
                    raise DegenerateGeometryError(
                        f"centers {centers[a].label!r} and {centers[b].label!r} are {d:.3g} A apart"
                    )
        for n in nuclei:
            if n.attached_to not in center_labels:
                raise SpinSystemError(f"nucleus {n.label!r} attached to unknown center {n.attached_to!r}")
        for c in couplings:
            missing = set(c.pair) - center_labels
            if missing:
                raise SpinSystemError(f"coupling {c.pair} references unknown centers {sorted(missing)}")

        axis = np.asarray(self.chiral_axis, dtype=float)
        norm = np.linalg.norm(axis)
        if axis.shape != (3,) or not norm > 0:
            raise SpinSystemError("chiral_axis must be a non-zero 3-vector")
        object.__setattr__(self, "chiral_axis", _frozen(axis / norm))

    def __eq__(self, other):
        if not isinstance(other, SpinSystem):
            return NotImplemented
        return (
            self.centers == other.centers
            and self.nuclei == other.nuclei
            and self.couplings == other.couplings
            and np.array_equal(self.chiral_axis, other.chiral_axis)
        )

    __hash__ = None

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.centers] + [n.label for n in self.nuclei]

    @property
    def electron_labels(self) -> list[str]:
        return [c.label for c in self.centers]

    @property
    def n_sites(self) -> int:
        return len(self.centers) + len(self.nuclei)

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SpinSystemError(f"unknown site {label!r}") from None

    def center(self, label: str) -> SpinCenter:
        for c in self.centers:
            if c.label == label:
                return c
        raise SpinSystemError(f"unknown center {label!r}")


def dipolar_tensor(g_i, g_j, r_ij, pair: tuple[str, str] = ("i", "j"), isotropic_MHz: float = 0.0) -> CouplingTensor:
    """Point-dipole coupling tensor in MHz.

    ``J = (mu0/4pi) mu_B^2 / (h r^3) [g_i g_j - 3 (g_i r) (g_j r)^T]`` with
    ``r`` the unit separation vector, plus ``isotropic_MHz`` on the diagonal.
    Swapping the two sites gives the transpose.
    """
    g_i = _as_g_tensor(g_i)
    g_j = _as_g_tensor(g_j)
    r = np.asarray(r_ij, dtype=float)
    dist = np.linalg.norm(r)
    if not np.isfinite(dist) or dist < MIN_DISTANCE_A:
        raise DegenerateGeometryError(f"separation {dist:.3g} A is below {MIN_DISTANCE_A} A")
    n = r / dist
    J = DIPOLAR_MHZ_A3 / dist**3 * (g_i @ g_j - 3.0 * np.outer(g_i @ n, g_j @ n))
    J = J + isotropic_MHz * np.eye(3)
    return CouplingTensor(pair, J)


def dipolar_couplings(centers: Sequence[SpinCenter], pairs, isotropic_MHz=None) -> tuple[CouplingTensor, ...]:
    """Point-dipole tensors for the listed ``(label_i, label_j)`` pairs."""
    by_label = {c.label: c for c in centers}
    isotropic_MHz = isotropic_MHz or {}
    out = []
    for a, b in pairs:
        ca, cb = by_label[a], by_label[b]
        iso = isotropic_MHz.get((a, b), 0.0)
        out.append(dipolar_tensor(ca.g_tensor, cb.g_tensor, cb.position - ca.position, (a, b), iso))
    return tuple(out)


_PAULI_HALF = {
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, -0.5j], [0.5j, 0]], dtype=complex),
    "z": np.array([[0.5, 0], [0, -0.5]], dtype=complex),
    "+": np.array([[0, 1], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [1, 0]], dtype=complex),
    "e": np.eye(2, dtype=complex),
}


@lru_cache(maxsize=512)
def _embedded(n_sites: int, index: int, axis: str) -> np.ndarray:
    op = np.ones((1, 1), dtype=complex)
    for k in range(n_sites):
        op = np.kron(op, _PAULI_HALF[axis] if k == index else _PAULI_HALF["e"])
    op.setflags(write=False)
    return op


def spin_operator(system: SpinSystem, site: str, axis) -> np.ndarray:
    """Spin operator of one site on the full Hilbert space.

    ``axis`` is one of ``"x"``, ``"y"``, ``"z"``, ``"+"``, ``"-"`` or a
    3-vector ``n`` (giving ``n . S``).
    """
    idx = system.index(site)
    if isinstance(axis, str):
        if axis not in _PAULI_HALF or axis == "e":
            raise SpinSystemError(f"unknown spin axis {axis!r}")
        return _embedded(system.n_sites, idx, axis)
    n = np.asarray(axis, dtype=float)
    return sum(n[k] * _embedded(system.n_sites, idx, a) for k, a in enumerate("xyz"))


def spin_vector(system: SpinSystem, site: str) -> list[np.ndarray]:
    return [spin_operator(system, site, a) for a in "xyz"]


def total_spin(system: SpinSystem, axis: str, sites: Sequence[str] | None = None) -> np.ndarray:
    sites = system.electron_labels if sites is None else sites
    return sum(spin_operator(system, s, axis) for s in sites)


def build_static_hamiltonian(system: SpinSystem, B) -> np.ndarray:
    """Static spin Hamiltonian in MHz for the field vector ``B`` (tesla).

    Electron Zeeman ``mu_B S.g.B``, bilinear couplings ``S_i.J.S_j``, nuclear
    Zeeman ``-gamma B.I`` and isotropic hyperfine ``A S.I``.
    """
    B = np.asarray(B, dtype=float)
    if B.shape != (3,) or not np.all(np.isfinite(B)):
        raise SpinSystemError("field must be a finite 3-vector in tesla")
    H = np.zeros((system.dim, system.dim), dtype=complex)
    for c in system.centers:
        S = spin_vector(system, c.label)
        field_MHz = MU_B_MHZ_PER_T * (c.g_tensor @ B)
        for k in range(3):
            if field_MHz[k] != 0.0:
                H += field_MHz[k] * S[k]
    for cp in system.couplings:
        Si = spin_vector(system, cp.pair[0])
        Sj = spin_vector(system, cp.pair[1])
        for a in range(3):
            for b in range(3):
                if cp.J[a, b] != 0.0:
                    H += cp.J[a, b] * (Si[a] @ Sj[b])
    for n in system.nuclei:
        I = spin_vector(system, n.label)
        S = spin_vector(system, n.attached_to)
        for k in range(3):
            if B[k] != 0.0:
                H -= n.larmor_MHz_per_T * B[k] * I[k]
            H += n.hyperfine_A_MHz * (S[k] @ I[k])
    return 0.5 * (H + H.conj().T)


class Transition(NamedTuple):
    i: int
    j: int
    gap_MHz: float
    weight: float
    observable: int = 0


def transition_table(H: np.ndarray, observables, threshold: float = 1e-6) -> list[Transition]:
    """Allowed transitions between eigenstates of ``H``.

    Eigenstates are numbered from 0 in order of increasing energy. For every
    pair ``i < j`` and every observable the squared matrix element
    ``|<i|O|j>|^2`` is reported when it exceeds ``threshold``.
    """
    if isinstance(observables, np.ndarray) and observables.ndim == 2:
        observables = [observables]
    energies, vecs = np.linalg.eigh(H)
    rows = []
    for k, O in enumerate(observables):
        M = np.abs(vecs.conj().T @ O @ vecs) ** 2
        ii, jj = np.nonzero(np.triu(M, k=1) > threshold)
        for i, j in zip(ii, jj):
            rows.append(Transition(int(i), int(j), float(energies[j] - energies[i]), float(M[i, j]), k))
    rows.sort(key=lambda t: (t.observable, t.i, t.j))
    return rows


def _check_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
        raise SpinSystemError("R must be a proper rotation matrix")
    return R


def rotate_system(system: SpinSystem, R) -> SpinSystem:
    """Rotate positions, g tensors, coupling tensors and the chiral axis by ``R``."""
    R = _check_rotation(R)
    centers = tuple(
        SpinCenter(c.label, R @ c.g_tensor @ R.T, R @ c.position, check_g=False) for c in system.centers
    )
    couplings = tuple(CouplingTensor(cp.pair, R @ cp.J @ R.T) for cp in system.couplings)
    return SpinSystem(centers, system.nuclei, couplings, R @ system.chiral_axis)


def rotation_matrix(alpha: float, beta: float, gamma: float = 0.0) -> np.ndarray:
    """Active zyz Euler rotation ``Rz(alpha) Ry(beta) Rz(gamma)``."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    Rz_a = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    Ry_b = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    Rz_g = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    return Rz_a @ Ry_b @ Rz_g


def align_to_z(axis) -> np.ndarray:
    """Smallest rotation taking ``axis`` onto +z."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    z = np.array([0.0, 0.0, 1.0])
    c = float(a @ z)
    if c > 1 - 1e-15:
        return np.eye(3)
    if c < -1 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    v = np.cross(a, z)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


def spin_rotation(R) -> np.ndarray:
    """SU(2) matrix representing the rotation ``R`` on one spin 1/2."""
    R = _check_rotation(R)
    # axis-angle from R
    angle = np.arccos(np.clip((np.trace(R) - 1) / 2, -1.0, 1.0))
    if angle < 1e-14:
        return np.eye(2, dtype=complex)
    if np.pi - angle < 1e-7:
        # R = 2 n n^T - 1
        M = (R + np.eye(3)) / 2
        k = int(np.argmax(np.diag(M)))
        n = M[:, k] / np.sqrt(M[k, k])
    else:
        n = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / (2 * np.sin(angle))
    sigma_n = 2 * sum(n[k] * _PAULI_HALF[a] for k, a in enumerate("xyz"))
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * sigma_n
