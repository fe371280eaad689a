"""Liouville-space generators and density-matrix propagation.

Density matrices are vectorized row-major (``rho.ravel()``), so that
``vec(A rho B) = (A kron B.T) vec(rho)``. Hamiltonians are in MHz, rates in
1/us and times in us.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import expm

from .constants import MU_B_MHZ_PER_T, TWO_PI
from .spinsys import SpinSystem, build_static_hamiltonian, spin_operator, spin_rotation, align_to_z
from .states import SINGLET_KET


class PropagationError(ArithmeticError):
    pass


class DissipationError(ValueError):
    pass


def _per_center(value, system: SpinSystem, name: str) -> dict[str, float | None]:
    if value is None or np.isscalar(value):
        return {label: value for label in system.electron_labels}
    if isinstance(value, Mapping):
        missing = set(system.electron_labels) - set(value)
        if missing:
            raise DissipationError(f"{name} missing for centers {sorted(missing)}")
        return dict(value)
    values = list(value)
    if len(values) != len(system.centers):
        raise DissipationError(f"{name} needs one value per center")
    return dict(zip(system.electron_labels, values))


def t1_t2_pairs(t1, t2) -> list[tuple[float, float]]:
    """Matching (T1, T2) values for scalar or per-center settings."""
    if t1 is None or t2 is None:
        return []
    if isinstance(t1, Mapping) and isinstance(t2, Mapping):
        return [(t1[k], t2[k]) for k in t1 if k in t2]
    if isinstance(t1, Mapping):
        return [(v, t2) for v in t1.values()]
    if isinstance(t2, Mapping):
        return [(t1, v) for v in t2.values()]
    return [(t1, t2)]


@dataclass(frozen=True)
class DissipationSpec:
    """Relaxation and recombination times in microseconds.

    ``t1_us`` and ``t2_us`` are either one value for every center or a mapping
    from center label. ``None`` switches the corresponding process off.
    ``triplet_channel`` adds recombination from the triplet manifold at the
    same rate as the singlet channel. ``t1_bias`` is ``"ground"`` (relax to
    the local Zeeman ground state) or ``"unbiased"`` (equal up and down
    rates, the high-temperature limit).
    """

    t1_us: float | Mapping[str, float] | None = None
    t2_us: float | Mapping[str, float] | None = None
    t_r_us: float | None = None
    triplet_channel: bool = False
    t1_bias: str = "ground"

    def __post_init__(self):
        if self.t1_bias not in ("ground", "unbiased"):
            raise DissipationError(f"t1_bias must be 'ground' or 'unbiased', got {self.t1_bias!r}")
        for name in ("t1_us", "t2_us"):
            v = getattr(self, name)
            values = v.values() if isinstance(v, Mapping) else [v]
            for x in values:
                if x is not None and not x > 0:
                    raise DissipationError(f"{name} must be > 0, got {x}")
        if self.t_r_us is not None and not self.t_r_us > 0:
            raise DissipationError(f"t_r_us must be > 0, got {self.t_r_us}")
        for a, b in t1_t2_pairs(self.t1_us, self.t2_us):
            if b > 2 * a:
                raise DissipationError(f"physicality guard violated: t2 = {b} > 2 * t1 = {2 * a}")


@dataclass(frozen=True)
class DriveSpec:
    """Continuous microwave drive, linearly polarized along lab x.

    ``b1_mT`` is the linearly polarized amplitude; the co-rotating component
    seen in the rotating frame is ``b1_mT / 2``.
    """

    freq_GHz: float
    b1_mT: float = 0.01
    phase: float = 0.0

    def __post_init__(self):
        if not self.b1_mT >= 0:
            raise ValueError(f"b1_mT must be >= 0, got {self.b1_mT}")
        if not self.freq_GHz > 0:
            raise ValueError(f"freq_GHz must be > 0, got {self.freq_GHz}")


@dataclass
class Generator:
    """Time-independent Liouvillian ``d rho/dt = L rho`` (1/us)."""

    matrix: np.ndarray
    dim: int
    frame_GHz: float = 0.0
    meta: dict = field(default_factory=dict)

    def eigvals(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def _left(A):
    return np.kron(A, np.eye(A.shape[0]))


def _right(A):
    return np.kron(np.eye(A.shape[0]), A.T)


def hamiltonian_superop(H: np.ndarray) -> np.ndarray:
    """``rho -> -2 pi i [H, rho]`` for ``H`` in MHz."""
    return -1j * TWO_PI * (_left(H) - _right(H))


def lindblad_dissipator(L: np.ndarray, rate: float = 1.0) -> np.ndarray:
    LdL = L.conj().T @ L
    return rate * (np.kron(L, L.conj()) - 0.5 * _left(LdL) - 0.5 * _right(LdL))


def _local_axis(center, B) -> np.ndarray:
    if B is None:
        return np.array([0.0, 0.0, 1.0])
    v = center.g_tensor @ np.asarray(B, dtype=float)
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([0.0, 0.0, 1.0])


def local_lowering(system: SpinSystem, label: str, axis) -> np.ndarray:
    """Lowering operator of ``label`` quantized along ``axis``."""
    S_minus = spin_operator(system, label, "-")
    R = align_to_z(axis).T
    if np.allclose(R, np.eye(3)):
        return S_minus
    u = spin_rotation(R)
    idx = system.index(label)
    U = np.ones((1, 1), dtype=complex)
    for k in range(system.n_sites):
        U = np.kron(U, u if k == idx else np.eye(2))
    return U @ S_minus @ U.conj().T


def relaxation_superop(system: SpinSystem, spec: DissipationSpec, B=None) -> np.ndarray:
    """Independent T1/T2 Lindblad dissipators for every electron center.

    Each center relaxes toward its local Zeeman ground state (zero
    temperature) at ``1/T1`` and dephases along its Zeeman axis ``g.B`` at
    ``1/T2 - 1/(2 T1)``. With ``t1_bias="unbiased"`` the population
    difference relaxes to zero at ``1/T1`` instead.
    """
    D = system.dim
    out = np.zeros((D * D, D * D), dtype=complex)
    t1 = _per_center(spec.t1_us, system, "t1_us")
    t2 = _per_center(spec.t2_us, system, "t2_us")
    for c in system.centers:
        n = _local_axis(c, B)
        g1 = 1.0 / t1[c.label] if t1[c.label] else 0.0
        g2 = 1.0 / t2[c.label] if t2[c.label] else 0.0
        if g1:
            lower = local_lowering(system, c.label, n)
            if spec.t1_bias == "ground":
                out += lindblad_dissipator(lower, g1)
            else:
                out += lindblad_dissipator(lower, g1 / 2) + lindblad_dissipator(lower.conj().T, g1 / 2)
        if g2:
            pure = g2 - 0.5 * g1
            if pure < -1e-12:
                raise DissipationError(
                    f"negative pure-dephasing rate {pure:.3g}/us for center {c.label!r} (T2 > 2 T1)"
                )
            if pure > 0:
                out += lindblad_dissipator(spin_operator(system, c.label, n), 2.0 * pure)
    return out


def rp_projectors(system: SpinSystem) -> tuple[np.ndarray, np.ndarray]:
    """Singlet and triplet projectors of the donor-acceptor pair on the full space."""
    Ps = np.outer(SINGLET_KET, SINGLET_KET.conj())
    rest = np.eye(system.dim // 4)
    Ps = np.kron(Ps, rest)
    return Ps, np.eye(system.dim) - Ps


def recombination_superop(system: SpinSystem, spec: DissipationSpec) -> np.ndarray:
    """Anti-commutator decay ``-{P, rho} / (2 T_R)`` out of the radical-pair manifold."""
    D = system.dim
    if spec.t_r_us is None:
        return np.zeros((D * D, D * D), dtype=complex)
    if len(system.centers) < 2:
        raise DissipationError("recombination needs a donor-acceptor pair")
    Ps, Pt = rp_projectors(system)
    P = Ps + Pt if spec.triplet_channel else Ps
    return -0.5 / spec.t_r_us * (_left(P) + _right(P))


def electron_m(system: SpinSystem) -> np.ndarray:
    """Total electron magnetic quantum number of every product basis state."""
    n_e = len(system.centers)
    idx = np.arange(system.dim)
    m = np.zeros(system.dim)
    for k in range(n_e):
        bit = (idx >> (system.n_sites - 1 - k)) & 1
        m += np.where(bit == 0, 0.5, -0.5)
    return m


def secular_part(H: np.ndarray, system: SpinSystem) -> np.ndarray:
    """Drop matrix elements that change the total electron ``m`` (RWA truncation)."""
    m = electron_m(system)
    return np.where(np.isclose(m[:, None], m[None, :]), H, 0.0)


def drive_hamiltonian(system: SpinSystem, drive: DriveSpec) -> np.ndarray:
    """Rotating-frame offset ``-nu sum S_z`` plus the co-rotating drive term."""
    nu_MHz = drive.freq_GHz * 1e3
    H = -nu_MHz * sum(spin_operator(system, c.label, "z") for c in system.centers)
    if drive.b1_mT > 0:
        b1_T = drive.b1_mT * 1e-3
        mean_g = np.mean([np.trace(c.g_tensor) / 3 for c in system.centers])
        b_res = nu_MHz / (mean_g * MU_B_MHZ_PER_T)
        if b1_T >= 0.01 * b_res:
            warnings.warn(f"B1 = {drive.b1_mT} mT is not small against B_res = {b_res:.4g} T; RWA questionable")
        e = np.array([np.cos(drive.phase), np.sin(drive.phase), 0.0])
        for c in system.centers:
            b = MU_B_MHZ_PER_T * (b1_T / 2) * (c.g_tensor @ e)
            H = H + b[0] * spin_operator(system, c.label, "x") + b[1] * spin_operator(system, c.label, "y")
    return H


def drive_superop(system: SpinSystem, drive: DriveSpec) -> tuple[np.ndarray, float]:
    """Rotating-frame drive term and the frame frequency in GHz."""
    return hamiltonian_superop(drive_hamiltonian(system, drive)), drive.freq_GHz


def build_generator(
    system: SpinSystem,
    B,
    dissipation: DissipationSpec | None = None,
    drive: DriveSpec | None = None,
) -> Generator:
    """Full generator at field ``B`` (tesla; a scalar means along lab z).

    With a drive the generator is in the frame rotating at the drive
    frequency about z, using the secular part of the static Hamiltonian.
    """
    B = np.array([0.0, 0.0, float(B)]) if np.isscalar(B) else np.asarray(B, dtype=float)
    H = build_static_hamiltonian(system, B)
    frame = 0.0
    if drive is not None:
        H = secular_part(H, system) + drive_hamiltonian(system, drive)
        frame = drive.freq_GHz
    L = hamiltonian_superop(H)
    if dissipation is not None:
        L = L + relaxation_superop(system, dissipation, B) + recombination_superop(system, dissipation)
    return Generator(L, system.dim, frame, {"B_T": B.tolist(), "drive": drive, "dissipation": dissipation})


def _uniform(t: np.ndarray) -> bool:
    if len(t) < 3:
        return True
    d = np.diff(t)
    return bool(np.allclose(d, d[0], rtol=1e-9, atol=1e-15))


def propagate(G, rho0: np.ndarray, t_grid) -> np.ndarray:
    """Density matrices ``exp(L t_k) rho0`` for every time in ``t_grid`` (us).

    ``G`` is a :class:`Generator` or an array of Liouvillians with optional
    leading batch axes; the result has shape ``batch + (n_t, d, d)``. Uniform
    grids reuse a single step exponential.
    """
    L = G.matrix if isinstance(G, Generator) else np.asarray(G)
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0 or t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be a non-empty ascending array starting at >= 0")
    d = rho0.shape[-1]
    batch = L.shape[:-2]
    v = np.broadcast_to(rho0.reshape(d * d), batch + (d * d,)).astype(complex)
    out = np.empty(batch + (len(t), d * d), dtype=complex)
    if _uniform(t):
        v = np.einsum("...ij,...j->...i", expm(L * t[0]), v) if t[0] > 0 else v
        out[..., 0, :] = v
        if len(t) > 1:
            step = expm(L * (t[1] - t[0]))
            for k in range(1, len(t)):
                v = np.einsum("...ij,...j->...i", step, v)
                out[..., k, :] = v
    else:
        for k, tk in enumerate(t):
            out[..., k, :] = np.einsum("...ij,...j->...i", expm(L * tk), v)
    if not np.all(np.isfinite(out)):
        raise PropagationError("non-finite density matrix entries; generator is ill-conditioned")
    return out.reshape(batch + (len(t), d, d))


def expectation(trajectory: np.ndarray, O: np.ndarray) -> np.ndarray:
    """``Re Tr[O rho(t)]`` along a trajectory."""
    return np.einsum("ij,...ji->...", O, trajectory).real


def to_lab_frame(trajectory: np.ndarray, system: SpinSystem, t_grid, frame_GHz: float) -> np.ndarray:
    """Undo the rotating frame: ``rho_lab(t) = U(t) rho_rot(t) U(t)^dag``."""
    m = electron_m(system)
    t = np.asarray(t_grid, dtype=float)
    phase = np.exp(-1j * TWO_PI * frame_GHz * 1e3 * np.outer(t, m))
    return phase[:, :, None] * trajectory * phase[:, None, :].conj()


def field_linear_generator(
    system: SpinSystem,
    dissipation: DissipationSpec | None = None,
    drive: DriveSpec | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Split the generator as ``L(B) = L0 + B * L1`` for a positive field along z.

    Equivalent to :func:`build_generator` for every ``B > 0`` and lets a whole
    field sweep be assembled without rebuilding Hamiltonians.
    """
    z = np.array([0.0, 0.0, 1.0])
    H0 = build_static_hamiltonian(system, np.zeros(3))
    H1 = build_static_hamiltonian(system, z) - H0
    if drive is not None:
        H0 = secular_part(H0, system) + drive_hamiltonian(system, drive)
        H1 = secular_part(H1, system)
    L0 = hamiltonian_superop(H0)
    if dissipation is not None:
        L0 = L0 + relaxation_superop(system, dissipation, z) + recombination_superop(system, dissipation)
    return L0, hamiltonian_superop(H1)


def expectation_series(G, rho0: np.ndarray, t_grid, O: np.ndarray) -> np.ndarray:
    """``Re Tr[O rho(t_k)]`` without storing the trajectory.

    Accepts the same batched generators as :func:`propagate`; the result has
    shape ``batch + (n_t,)``.
    """
    L = G.matrix if isinstance(G, Generator) else np.asarray(G)
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0 or t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be a non-empty ascending array starting at >= 0")
    d = rho0.shape[-1]
    batch = L.shape[:-2]
    o = np.ascontiguousarray(O.T).reshape(d * d)
    v = np.broadcast_to(rho0.reshape(d * d), batch + (d * d,)).astype(complex)
    out = np.empty(batch + (len(t),))
    if _uniform(t):
        if t[0] > 0:
            v = np.einsum("...ij,...j->...i", expm(L * t[0]), v)
        out[..., 0] = (v @ o).real
        if len(t) > 1:
            step = expm(L * (t[1] - t[0]))
            for k in range(1, len(t)):
                v = np.einsum("...ij,...j->...i", step, v)
                out[..., k] = (v @ o).real
    else:
        for k, tk in enumerate(t):
            out[..., k] = (np.einsum("...ij,...j->...i", expm(L * tk), v) @ o).real
    if not np.all(np.isfinite(out)):
        raise PropagationError("non-finite signal; generator is ill-conditioned")
    return out


def window_expectation(G, rho0: np.ndarray, window_us, O: np.ndarray) -> np.ndarray:
    """Exact time average of ``Re Tr[O rho(t)]`` over ``[t1, t2]`` (us).

    Uses ``expm([[L, 1], [0, 0]] tau)``, whose upper-right block is the
    integral of ``exp(L s)`` over ``[0, tau]``; no time sampling is involved.
    """
    L = G.matrix if isinstance(G, Generator) else np.asarray(G)
    t1, t2 = map(float, window_us)
    if t1 < 0 or t2 < t1:
        raise ValueError("window must satisfy 0 <= t1 <= t2")
    d = rho0.shape[-1]
    n = d * d
    batch = L.shape[:-2]
    o = np.ascontiguousarray(O.T).reshape(n)
    v = np.broadcast_to(rho0.reshape(n), batch + (n,)).astype(complex)
    if t1 > 0:
        v = np.einsum("...ij,...j->...i", expm(L * t1), v)
    if t2 == t1:
        out = (v @ o).real
    else:
        tau = t2 - t1
        M = np.zeros(batch + (2 * n, 2 * n), dtype=complex)
        M[..., :n, :n] = L * tau
        M[..., :n, n:] = np.eye(n) * tau
        integral = expm(M)[..., :n, n:]
        out = (np.einsum("...ij,...j->...i", integral, v) @ o).real / tau
    if not np.all(np.isfinite(out)):
        raise PropagationError("non-finite signal; generator is ill-conditioned")
    return out
