"""TR-EPR sweeps, powder averages, NMR absorption and polarization transfer."""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
from scipy.linalg import expm
from scipy.ndimage import gaussian_filter1d

from . import __version__
from .liouville import (
    DissipationSpec,
    DriveSpec,
    expectation_series,
    field_linear_generator,
    window_expectation,
)
from .results import Axis, SpectrumResult
from .spinsys import (
    SpinSystem,
    align_to_z,
    build_static_hamiltonian,
    rotate_system,
    rotation_matrix,
    spin_operator,
    total_spin,
)
from .states import RPState, SensorState, acceptor_polarization, assemble_initial, polarization

__all__ = [
    "FixedParallel",
    "PowderGrid",
    "TreprPlan",
    "NmrPlan",
    "Pulse",
    "PulseProgram",
    "trepr_map",
    "trepr_spectrum",
    "integrate_window",
    "broaden",
    "powder_average",
    "powder_grid",
    "powder_convergence",
    "nmr_absorption",
    "fit_line_areas",
    "transfer_sequence",
    "acceptor_polarization",
    "polarization",
]

SIGN_CONVENTION = "positive <S_y> = absorption (A), negative = emission (E)"
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
POWDER_BLOCK = 16


class ExperimentError(ValueError):
    pass


class UnresolvedTransitionError(ExperimentError):
    pass


@dataclass(frozen=True)
class FixedParallel:
    """Molecule oriented with its chiral axis along the static field."""


@dataclass(frozen=True)
class PowderGrid:
    """Deterministic equal-weight orientation grid of ``n_points`` directions.

    ``n_gamma`` rotations about the molecular chiral axis are added per
    direction; ``None`` picks 1 for axially symmetric molecules and 6
    otherwise.
    """

    n_points: int = 256
    n_gamma: int | None = None

    def __post_init__(self):
        if self.n_points < 16:
            raise ExperimentError(f"powder grids need at least 16 orientations, got {self.n_points}")


@dataclass(frozen=True)
class TreprPlan:
    """Field sweep (mT) and time grid (ns) for a TR-EPR experiment."""

    b_grid: np.ndarray
    t_grid: np.ndarray
    mw: DriveSpec
    orientation: FixedParallel | PowderGrid = field(default_factory=FixedParallel)
    window_ns: tuple[float, float] | None = None
    fwhm_mT: float = 0.0
    dissipation: DissipationSpec | None = None
    oversample: int = 1

    def __post_init__(self):
        b = np.asarray(self.b_grid, dtype=float)
        t = np.asarray(self.t_grid, dtype=float)
        if b.ndim != 1 or t.ndim != 1 or len(b) == 0 or len(t) == 0:
            raise ExperimentError("field and time grids must be non-empty 1-D arrays")
        if np.any(np.diff(b) <= 0) or np.any(np.diff(t) <= 0):
            raise ExperimentError("field and time grids must be strictly ascending")
        if b[0] <= 0:
            raise ExperimentError("fields must be positive")
        if t[0] < 0:
            raise ExperimentError("times must start at >= 0")
        if self.window_ns is not None:
            lo, hi = self.window_ns
            if lo > hi or lo < t[0] or hi > t[-1]:
                raise ExperimentError(f"window {self.window_ns} ns not inside the time grid")
        if self.fwhm_mT < 0:
            raise ExperimentError("fwhm_mT must be >= 0")
        if int(self.oversample) != self.oversample or self.oversample < 1:
            raise ExperimentError("oversample must be a positive integer")
        if self.oversample > 1 and len(b) > 2 and not np.allclose(np.diff(b), b[1] - b[0], rtol=1e-6):
            raise ExperimentError("oversampling needs a uniform field grid")
        object.__setattr__(self, "b_grid", b)
        object.__setattr__(self, "t_grid", t)


@dataclass(frozen=True)
class NmrPlan:
    b0: np.ndarray
    nu_grid: np.ndarray
    linewidth_MHz: float = 0.5

    def __post_init__(self):
        nu = np.asarray(self.nu_grid, dtype=float)
        if nu.ndim != 1 or len(nu) == 0 or np.any(np.diff(nu) <= 0):
            raise ExperimentError("nu_grid must be a non-empty ascending array")
        if not self.linewidth_MHz > 0:
            raise ExperimentError("linewidth_MHz must be > 0")
        b0 = np.asarray(self.b0, dtype=float)
        if b0.shape != (3,):
            raise ExperimentError("b0 must be a 3-vector in tesla")
        object.__setattr__(self, "nu_grid", nu)
        object.__setattr__(self, "b0", b0)


@dataclass(frozen=True)
class Pulse:
    """Ideal rotation of ``target``, applied only when ``control`` is in ``control_state``."""

    target: str
    control: str | None = None
    control_state: str = "up"
    angle: float = np.pi
    axis: str = "x"

    def __post_init__(self):
        if self.control_state not in ("up", "down"):
            raise ExperimentError(f"control_state must be 'up' or 'down', got {self.control_state!r}")
        if self.control == self.target:
            raise ExperimentError("pulse target and control must differ")


@dataclass(frozen=True)
class PulseProgram:
    """Ordered conditional rotations, checked for selectivity at field ``b_T``.

    ``linewidth_MHz`` is the excitation bandwidth: a pulse is refused when a
    transition it must leave alone lies within ``10 * linewidth_MHz`` of one
    it drives.
    """

    pulses: tuple[Pulse, ...] = ()
    b_T: float = 1.24
    linewidth_MHz: float = 10.0


# --------------------------------------------------------------------------- #
# TR-EPR

FIELD_BATCH = 64


def _signal_operator(system: SpinSystem) -> np.ndarray:
    return total_spin(system, "y")


def _fine_fields(plan: TreprPlan) -> np.ndarray:
    """Field points (tesla) actually simulated: ``oversample`` per output bin."""
    b = plan.b_grid
    k = plan.oversample
    if k == 1:
        return b * 1e-3
    step = b[1] - b[0] if len(b) > 1 else 0.0
    offsets = ((np.arange(k) + 0.5) / k - 0.5) * step
    return (b[:, None] + offsets[None, :]).ravel() * 1e-3


def _bin(data: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return data
    return data.reshape(data.shape[:-1] + (-1, k)).mean(axis=-1)


def _sweep(system: SpinSystem, rho0: np.ndarray, b_T: np.ndarray, plan: TreprPlan, mode: str) -> np.ndarray:
    """Signal for every field in ``b_T``: ``(n_t, n_b)`` map or ``(n_b,)`` window average."""
    L0, L1 = field_linear_generator(system, plan.dissipation, plan.mw)
    O = _signal_operator(system)
    parts = []
    for sl in _chunks(len(b_T), FIELD_BATCH):
        Ls = L0[None] + b_T[sl, None, None] * L1[None]
        if mode == "map":
            parts.append(expectation_series(Ls, rho0, plan.t_grid * 1e-3, O).T)
        else:
            parts.append(window_expectation(Ls, rho0, np.asarray(plan.window_ns) * 1e-3, O))
    return np.concatenate(parts, axis=-1)


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(k, min(k + size, n)) for k in range(0, n, size)]


def _map(fn, items, n_jobs: int):
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, items))


def _fixed_chunk(sl, system, rho0, b_T, plan, mode):
    return _sweep(system, rho0, b_T[sl], plan, mode)


def _metadata(kind: str, rp, plan, **extra) -> dict:
    meta = {
        "experiment": kind,
        "state": getattr(rp, "kind", "explicit") if rp is not None else "explicit",
        "state_params": dict(vars(rp)) if rp is not None else {},
        "provenance": f"cissim {__version__}",
        "sign_convention": SIGN_CONVENTION,
    }
    if plan is not None:
        meta["plan"] = dict(vars(plan))
    meta.update(extra)
    return meta


def oriented_parallel(system: SpinSystem) -> SpinSystem:
    """The molecule rotated so that its chiral axis is along lab z."""
    R = align_to_z(system.chiral_axis)
    return system if np.allclose(R, np.eye(3)) else rotate_system(system, R)


def _fixed(system, rp, sensor, plan, n_jobs, rho0, mode):
    oriented = oriented_parallel(system)
    if rho0 is None:
        rho0 = assemble_initial(rp, sensor or SensorState(), oriented)
    b_T = _fine_fields(plan)
    size = -(-len(b_T) // max(n_jobs, 1))
    work = partial(_fixed_chunk, system=oriented, rho0=rho0, b_T=b_T, plan=plan, mode=mode)
    try:
        parts = _map(work, _chunks(len(b_T), size), n_jobs)
    except ArithmeticError as exc:
        raise type(exc)(f"{exc} (orientation: fixed parallel)") from exc
    return _bin(np.concatenate(parts, axis=-1), plan.oversample)


def trepr_map(
    system: SpinSystem,
    rp: RPState | None,
    sensor: SensorState | None,
    plan: TreprPlan,
    n_jobs: int = 1,
    rho0: np.ndarray | None = None,
) -> SpectrumResult:
    """Rotating-frame ``<sum_i S_yi>(t, B)`` under weak cw drive.

    With a :class:`FixedParallel` plan the molecule is aligned with the field;
    ``rho0``, if given, replaces the assembled initial state and must already
    refer to that aligned frame. :class:`PowderGrid` plans are delegated to
    :func:`powder_average`.
    """
    if isinstance(plan.orientation, PowderGrid):
        if rho0 is not None:
            raise ExperimentError("explicit initial states are not supported for powder averages")
        return powder_average(system, rp, sensor, plan, n_jobs=n_jobs)
    data = _fixed(system, rp, sensor, plan, n_jobs, rho0, "map")
    return SpectrumResult(
        [Axis("time", "ns", plan.t_grid), Axis("field", "mT", plan.b_grid)],
        data,
        _metadata("trepr", rp, plan, orientation="fixed_parallel"),
    )


def trepr_spectrum(
    system: SpinSystem,
    rp: RPState | None,
    sensor: SensorState | None,
    plan: TreprPlan,
    n_jobs: int = 1,
    rho0: np.ndarray | None = None,
) -> SpectrumResult:
    """Field spectrum averaged over ``plan.window_ns`` and broadened by ``plan.fwhm_mT``.

    The window average is evaluated in closed form rather than from sampled
    times, so off-resonance precession cannot alias into the spectrum.
    """
    if plan.window_ns is None:
        raise ExperimentError("trepr_spectrum needs plan.window_ns")
    if isinstance(plan.orientation, PowderGrid):
        if rho0 is not None:
            raise ExperimentError("explicit initial states are not supported for powder averages")
        data, extra = _powder(system, rp, sensor, plan, n_jobs, "window")
    else:
        data, extra = _fixed(system, rp, sensor, plan, n_jobs, rho0, "window"), {"orientation": "fixed_parallel"}
    spec = SpectrumResult(
        [Axis("field", "mT", plan.b_grid)],
        data,
        _metadata("trepr_window", rp, plan, window_ns=list(plan.window_ns), **extra),
    )
    return broaden(spec, plan.fwhm_mT)


def integrate_window(spectrum: SpectrumResult, window_ns) -> SpectrumResult:
    """Time average of a (time, field) map over ``window_ns`` (trapezoidal)."""
    t = spectrum.axes[0].values
    lo, hi = map(float, window_ns)
    if lo > hi or hi < t[0] or lo > t[-1] or lo < t[0] - 1e-9 or hi > t[-1] + 1e-9:
        raise ExperimentError(f"window {window_ns} does not overlap the time axis [{t[0]}, {t[-1]}]")
    data = spectrum.data
    if hi == lo:
        out = np.array([np.interp(lo, t, data[:, k]) for k in range(data.shape[1])])
    else:
        inner = t[(t > lo) & (t < hi)]
        tt = np.concatenate([[lo], inner, [hi]])
        vals = np.stack([np.interp(tt, t, data[:, k]) for k in range(data.shape[1])], axis=1)
        out = np.trapezoid(vals, tt, axis=0) / (hi - lo)
    meta = dict(spectrum.metadata, window_ns=[lo, hi])
    return SpectrumResult(spectrum.axes[1:], out, meta)


def broaden(spectrum: SpectrumResult, fwhm: float) -> SpectrumResult:
    """Convolve along the last axis with a unit-area gaussian of the given FWHM.

    Edges are zero-padded. Non-uniform axes are resampled to their smallest
    step and back.
    """
    if fwhm == 0:
        return spectrum
    if fwhm < 0:
        raise ExperimentError("fwhm must be >= 0")
    x = spectrum.axes[-1].values
    if len(x) < 2:
        return spectrum
    steps = np.diff(x)
    uniform = np.allclose(steps, steps[0], rtol=1e-6)
    dx = steps[0] if uniform else steps.min()
    if fwhm < dx:
        warnings.warn(f"FWHM {fwhm} is below the axis step {dx}; broadening skipped")
        return spectrum
    sigma = fwhm * FWHM_TO_SIGMA / dx
    data = spectrum.data
    if uniform:
        out = gaussian_filter1d(data, sigma, axis=-1, mode="constant", cval=0.0, truncate=6.0)
    else:
        xu = np.arange(x[0], x[-1] + dx / 2, dx)
        resampled = np.apply_along_axis(lambda r: np.interp(xu, x, r), -1, data)
        smooth = gaussian_filter1d(resampled, sigma, axis=-1, mode="constant", cval=0.0, truncate=6.0)
        out = np.apply_along_axis(lambda r: np.interp(x, xu, r), -1, smooth)
    return SpectrumResult(spectrum.axes, out, dict(spectrum.metadata, fwhm=fwhm))


# --------------------------------------------------------------------------- #
# Powder averaging


def _is_axial(system: SpinSystem, tol: float = 1e-9) -> bool:
    n = system.chiral_axis
    P = np.outer(n, n)
    ref = system.centers[0].position
    for c in system.centers:
        d = c.position - ref
        if np.linalg.norm(d - (d @ n) * n) > tol * max(1.0, np.linalg.norm(d)):
            return False
    tensors = [c.g_tensor for c in system.centers] + [cp.J for cp in system.couplings]
    for T in tensors:
        # axial about n  <=>  commutes with n n^T and isotropic in the plane
        if not np.allclose(T @ P, P @ T, atol=tol):
            return False
        Q = np.eye(3) - P
        perp = Q @ T @ Q
        if not np.allclose(perp, np.trace(perp) / 2 * Q, atol=tol):
            return False
    return True


def powder_grid(n_points: int, n_gamma: int = 1) -> list[np.ndarray]:
    """Rotation matrices of a symmetrized golden-spiral orientation grid.

    ``n_points // 4`` golden-spiral directions on the upper hemisphere are
    completed by their images under inversion and under a pi rotation about
    z, so the grid is closed under ``n -> -n``. Each direction is combined
    with ``n_gamma`` equally spaced rotations about the molecular axis.
    """
    m = n_points // 4
    if m < 4:
        raise ExperimentError(f"powder grids need at least 16 orientations, got {n_points}")
    golden = np.pi * (3.0 - np.sqrt(5.0))
    k = np.arange(m)
    beta = np.arccos((k + 0.5) / m)
    alpha = np.mod(k * golden, 2 * np.pi)
    gammas = 2 * np.pi * np.arange(n_gamma) / n_gamma
    rots = []
    for a, b in zip(alpha, beta):
        for aa, bb in ((a, b), (a + np.pi, b), (a + np.pi, np.pi - b), (a, np.pi - b)):
            for g in gammas:
                rots.append(rotation_matrix(aa, bb, g))
    return rots


def _powder_block(rots, system, rp, sensor, b_T, plan, mode):
    total = None
    for R in rots:
        rotated = rotate_system(system, R)
        rho0 = assemble_initial(rp, sensor, rotated)
        try:
            m = _sweep(rotated, rho0, b_T, plan, mode)
        except ArithmeticError as exc:
            raise type(exc)(f"{exc} (orientation R={R.round(6).tolist()})") from exc
        total = m if total is None else total + m
    return total


def _powder(system, rp, sensor, plan, n_jobs, mode):
    if not isinstance(plan.orientation, PowderGrid):
        raise ExperimentError("powder averaging needs a PowderGrid orientation plan")
    grid = plan.orientation
    n_gamma = grid.n_gamma or (1 if _is_axial(system) else 6)
    mol = rotate_system(system, align_to_z(system.chiral_axis))
    rots = powder_grid(grid.n_points, n_gamma)
    blocks = [rots[s] for s in _chunks(len(rots), POWDER_BLOCK)]
    work = partial(_powder_block, system=mol, rp=rp, sensor=sensor or SensorState(),
                   b_T=_fine_fields(plan), plan=plan, mode=mode)
    parts = _map(work, blocks, n_jobs)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    data = _bin(total / len(rots), plan.oversample)
    return data, {"orientation": "powder", "n_orientations": len(rots), "n_gamma": n_gamma}


def powder_average(
    system: SpinSystem,
    rp: RPState,
    sensor: SensorState | None,
    plan: TreprPlan,
    n_jobs: int = 1,
) -> SpectrumResult:
    """Orientation average of the TR-EPR map with the field fixed along z.

    The molecule, including the quantization axis of the initial radical-pair
    state, is rotated; sensor states stay quantized along the field. Block
    sums run in a fixed order so the result does not depend on ``n_jobs``.
    """
    data, extra = _powder(system, rp, sensor, plan, n_jobs, "map")
    return SpectrumResult(
        [Axis("time", "ns", plan.t_grid), Axis("field", "mT", plan.b_grid)],
        data,
        _metadata("trepr", rp, plan, **extra),
    )


def powder_convergence(system, rp, sensor, plan: TreprPlan, n_jobs: int = 1) -> float:
    """Relative max-norm change of the powder map when the grid is doubled."""
    grid = plan.orientation
    coarse = powder_average(system, rp, sensor, plan, n_jobs).data
    doubled = replace(plan, orientation=PowderGrid(2 * grid.n_points, grid.n_gamma))
    fine = powder_average(system, rp, sensor, doubled, n_jobs).data
    return float(np.abs(fine - coarse).max() / np.abs(fine).max())


# --------------------------------------------------------------------------- #
# NMR


def lorentzian(x, x0, fwhm):
    hw = fwhm / 2
    return hw / np.pi / ((x - x0) ** 2 + hw**2)


def nmr_lines(system: SpinSystem, rho0: np.ndarray, b0, threshold: float = 1e-6):
    """Nuclear transitions ``(frequency_MHz, intensity)`` in the static eigenbasis.

    Intensity is ``(rho_ii - rho_jj) |<j|I_x|i>|^2`` with ``E_i < E_j``.
    """
    if not system.nuclei:
        raise ExperimentError("NMR needs a probe nucleus in the spin system")
    H = build_static_hamiltonian(system, b0)
    E, V = np.linalg.eigh(H)
    pops = np.real(np.einsum("ai,ab,bi->i", V.conj(), rho0, V))
    Ix = sum(spin_operator(system, n.label, "x") for n in system.nuclei)
    M = np.abs(V.conj().T @ Ix @ V) ** 2
    lines = []
    for i in range(len(E)):
        for j in range(i + 1, len(E)):
            if M[i, j] > threshold:
                lines.append((float(E[j] - E[i]), float((pops[i] - pops[j]) * M[i, j])))
    return lines


def nmr_absorption(
    system: SpinSystem,
    rp: RPState | None,
    sensor: SensorState | None,
    plan: NmrPlan,
    rho0: np.ndarray | None = None,
) -> SpectrumResult:
    """Linear-response absorption ``chi''(nu)`` of the probe nuclei."""
    if rho0 is None:
        rho0 = assemble_initial(rp, sensor or SensorState(), system)
    lines = nmr_lines(system, rho0, plan.b0)
    nu = plan.nu_grid
    chi = np.zeros_like(nu)
    for f, w in lines:
        chi += w * lorentzian(nu, f, plan.linewidth_MHz)
    return SpectrumResult(
        [Axis("frequency", "MHz", nu)],
        chi,
        _metadata("nmr", rp, plan, lines=[[f, w] for f, w in lines]),
    )


def fit_line_areas(spectrum: SpectrumResult, centers, linewidth: float) -> np.ndarray:
    """Least-squares areas of unit-area lorentzians at fixed ``centers``."""
    x = spectrum.axes[-1].values
    A = np.stack([lorentzian(x, c, linewidth) for c in centers], axis=1)
    areas, *_ = np.linalg.lstsq(A, spectrum.data, rcond=None)
    return areas


# --------------------------------------------------------------------------- #
# Polarization transfer


def _level_energies(system: SpinSystem, b_T: float) -> np.ndarray:
    """Eigenvalues assigned to the product states they overlap most."""
    H = build_static_hamiltonian(system, [0.0, 0.0, b_T])
    E, V = np.linalg.eigh(H)
    owner = np.argmax(np.abs(V) ** 2, axis=1)
    return E[owner]


def _bit(system: SpinSystem, label: str) -> int:
    return system.n_sites - 1 - system.index(label)


def _check_selective(system: SpinSystem, pulse: Pulse, program: PulseProgram) -> None:
    if pulse.control is None:
        return
    E = _level_energies(system, program.b_T)
    tb, cb = 1 << _bit(system, pulse.target), 1 << _bit(system, pulse.control)
    want = 0 if pulse.control_state == "up" else cb
    driven, spectator = [], []
    for a in range(system.dim):
        if a & tb:
            continue
        gap = abs(E[a | tb] - E[a])
        (driven if (a & cb) == want else spectator).append(gap)
    driven, spectator = np.array(driven), np.array(spectator)
    diff = np.abs(driven[:, None] - spectator[None, :])
    if diff.min() <= 10 * program.linewidth_MHz:
        i, j = np.unravel_index(np.argmin(diff), diff.shape)
        raise UnresolvedTransitionError(
            f"pulse on {pulse.target!r} conditioned on {pulse.control!r}={pulse.control_state} is not "
            f"selective: driven gap {driven[i]:.4f} MHz vs spectator gap {spectator[j]:.4f} MHz "
            f"(need > {10 * program.linewidth_MHz} MHz separation)"
        )


def pulse_unitary(system: SpinSystem, pulse: Pulse) -> np.ndarray:
    """Ideal (conditional) rotation on the full Hilbert space."""
    axis = {"x": [1, 0, 0], "y": [0, 1, 0], "z": [0, 0, 1]}.get(pulse.axis, pulse.axis)
    n = np.asarray(axis, dtype=float)
    u = spin_rotation_about(n, pulse.angle)
    idx = system.index(pulse.target)
    R = np.ones((1, 1), dtype=complex)
    for k in range(system.n_sites):
        R = np.kron(R, u if k == idx else np.eye(2))
    if pulse.control is None:
        return R
    sign = 1.0 if pulse.control_state == "up" else -1.0
    P = 0.5 * np.eye(system.dim) + sign * spin_operator(system, pulse.control, "z")
    return P @ R + (np.eye(system.dim) - P)


def spin_rotation_about(n, angle: float) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    sig = np.array([[n[2], n[0] - 1j * n[1]], [n[0] + 1j * n[1], -n[2]]])
    return expm(-0.5j * angle * sig)


def transfer_sequence(system: SpinSystem, rho0: np.ndarray, program: PulseProgram) -> np.ndarray:
    """Apply the pulse program as instantaneous ideal unitaries.

    Every conditional pulse is first checked for spectral selectivity at
    ``program.b_T``; unresolved transitions raise
    :class:`UnresolvedTransitionError`.
    """
    rho = np.array(rho0, dtype=complex)
    for pulse in program.pulses:
        for label in (pulse.target, pulse.control):
            if label is not None and label not in system.electron_labels:
                raise ExperimentError(f"pulse addresses unknown center {label!r}")
        _check_selective(system, pulse, program)
        U = pulse_unitary(system, pulse)
        rho = U @ rho @ U.conj().T
    return rho
