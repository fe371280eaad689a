import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.sparse.linalg import expm_multiply

from cissim.constants import G_E, MU_B_MHZ_PER_T
from cissim.liouville import (
    DissipationError,
    DissipationSpec,
    DriveSpec,
    Generator,
    build_generator,
    expectation,
    expectation_series,
    field_linear_generator,
    hamiltonian_superop,
    propagate,
    recombination_superop,
    relaxation_superop,
    to_lab_frame,
    window_expectation,
)
from cissim.spinsys import SpinCenter, SpinSystem, spin_operator, total_spin
from cissim.states import SINGLET_KET, T0_KET, TPLUS_KET, Polarized, SensorState, Singlet, assemble_initial

from conftest import make_da, make_dqa, random_density, single

FIG4 = DissipationSpec(t1_us=2.0, t2_us=0.5, t_r_us=10.0)
PLUS_X = np.full((2, 2), 0.5, dtype=complex)


def assert_physical(traj, trace=True):
    herm = np.abs(traj - np.swapaxes(traj, -1, -2).conj()).max()
    assert herm < 1e-10
    if trace:
        assert np.abs(np.trace(traj, axis1=-2, axis2=-1) - 1).max() < 1e-9
    rho_h = (traj + np.swapaxes(traj, -1, -2).conj()) / 2
    assert np.linalg.eigvalsh(rho_h).min() >= -1e-8


def test_larmor_precession():
    s = single()
    w = 3.0
    H = w * spin_operator(s, "S", "z")
    t = np.linspace(0, 2, 41)
    sx = expectation(propagate(Generator(hamiltonian_superop(H), 2), PLUS_X, t), spin_operator(s, "S", "x"))
    np.testing.assert_allclose(sx, 0.5 * np.cos(2 * np.pi * w * t), atol=1e-12)


def test_commuting_state_is_stationary():
    H = np.diag([1.0, -2.0, 0.5, 0.0]).astype(complex)
    rho = np.diag([0.1, 0.2, 0.3, 0.4]).astype(complex)
    traj = propagate(hamiltonian_superop(H), rho, np.linspace(0, 3, 7))
    assert np.abs(traj - rho).max() < 1e-14


def test_singlet_t0_mixing():
    # with J_zz only, |S> <-> |T0> oscillate at the Zeeman difference dnu
    gD, gA, B = 2.0, 2.004, 0.35
    c = (SpinCenter("D", gD, [0, 0, 0]), SpinCenter("A", gA, [0, 0, 20]))
    from cissim.spinsys import CouplingTensor

    s = SpinSystem(c, (), (CouplingTensor(("D", "A"), np.diag([0, 0, -5.0])),))
    G = build_generator(s, B)
    t = np.linspace(0, 0.5, 101)
    traj = propagate(G, np.outer(SINGLET_KET, SINGLET_KET), t)
    pS = np.einsum("i,tij,j->t", SINGLET_KET, traj, SINGLET_KET).real
    dnu = (gA - gD) * MU_B_MHZ_PER_T * B
    np.testing.assert_allclose(pS, np.cos(np.pi * dnu * t) ** 2, atol=1e-9)


def test_t2_decay():
    s = single()
    L = relaxation_superop(s, DissipationSpec(t1_us=5.0, t2_us=0.7), [0, 0, 1.0])
    t = np.linspace(0, 3, 31)
    sx = expectation(propagate(L, PLUS_X, t), spin_operator(s, "S", "x"))
    np.testing.assert_allclose(sx, 0.5 * np.exp(-t / 0.7), atol=1e-12)


def test_t1_decay_to_ground():
    s = single()
    L = relaxation_superop(s, DissipationSpec(t1_us=2.0, t2_us=1.0), [0, 0, 1.0])
    t = np.linspace(0, 10, 21)
    up = np.diag([1.0, 0.0]).astype(complex)
    traj = propagate(L, up, t)
    np.testing.assert_allclose(traj[:, 0, 0].real, np.exp(-t / 2.0), atol=1e-12)
    assert_physical(traj)


def test_t1_unbiased_relaxes_to_mixed():
    s = single()
    L = relaxation_superop(s, DissipationSpec(t1_us=2.0, t1_bias="unbiased"), [0, 0, 1.0])
    traj = propagate(L, np.diag([1.0, 0.0]).astype(complex), np.linspace(0, 10, 11))
    pol = traj[:, 0, 0].real - traj[:, 1, 1].real
    np.testing.assert_allclose(pol, np.exp(-np.linspace(0, 10, 11) / 2.0), atol=1e-12)


def test_per_site_t2_three_spins():
    c = tuple(SpinCenter(k, G_E, [0, 0, 10 * i]) for i, k in enumerate("DAQ"))
    s = SpinSystem(c)
    t2 = {"D": 0.3, "A": 0.5, "Q": 0.9}
    L = relaxation_superop(s, DissipationSpec(t1_us=2.0, t2_us=t2), [0, 0, 1.0])
    rho0 = np.kron(np.kron(PLUS_X, PLUS_X), PLUS_X)
    t = np.linspace(0, 1.0, 11)
    traj = propagate(L, rho0, t)
    for k, T2 in t2.items():
        sx = expectation(traj, spin_operator(s, k, "x"))
        fitted = -np.polyfit(t, np.log(sx / 0.5), 1)[0] ** -1
        assert fitted == pytest.approx(T2, rel=0.01)


def test_recombination_singlet_decay():
    s = make_dqa()
    L = recombination_superop(s, DissipationSpec(t_r_us=10.0))
    t = np.linspace(0, 20, 11)
    rho = assemble_initial(Singlet(), SensorState("mixed"), s)
    tr = np.trace(propagate(L, rho, t), axis1=-2, axis2=-1).real
    np.testing.assert_allclose(tr, np.exp(-t / 10.0), atol=1e-12)
    tp = np.kron(np.outer(TPLUS_KET, TPLUS_KET), np.eye(2) / 2)
    tr = np.trace(propagate(L, tp, t), axis1=-2, axis2=-1).real
    np.testing.assert_allclose(tr, 1.0, atol=1e-12)


def test_recombination_coherence_half_rate():
    s = make_da()
    L = recombination_superop(s, DissipationSpec(t_r_us=4.0))
    k = (SINGLET_KET + T0_KET) / np.sqrt(2)
    t = np.linspace(0, 8, 9)
    traj = propagate(L, np.outer(k, k), t)
    pS = np.einsum("i,tij,j->t", SINGLET_KET, traj, SINGLET_KET).real
    coh = np.einsum("i,tij,j->t", SINGLET_KET, traj, T0_KET).real
    pT = np.einsum("i,tij,j->t", T0_KET, traj, T0_KET).real
    np.testing.assert_allclose(pS, 0.5 * np.exp(-t / 4.0), atol=1e-12)
    np.testing.assert_allclose(coh, 0.5 * np.exp(-t / 8.0), atol=1e-12)
    np.testing.assert_allclose(pT, 0.5, atol=1e-12)


def test_triplet_channel():
    s = make_da()
    L = recombination_superop(s, DissipationSpec(t_r_us=4.0, triplet_channel=True))
    tp = np.outer(TPLUS_KET, TPLUS_KET)
    tr = np.trace(propagate(L, tp, [0, 4.0]), axis1=-2, axis2=-1).real
    assert tr[1] == pytest.approx(np.exp(-1))


def _resonance(g, nu_GHz):
    return nu_GHz * 1e3 / (g * MU_B_MHZ_PER_T)


def test_rabi_on_resonance():
    g, nu, b1 = G_E, 9.8, 0.05
    s = single(g)
    G = build_generator(s, _resonance(g, nu), drive=DriveSpec(nu, b1))
    nu_r = g * MU_B_MHZ_PER_T * b1 * 1e-3 / 2
    t = np.linspace(0, 2 / nu_r, 101)
    down = np.diag([0.0, 1.0]).astype(complex)
    p_up = propagate(G, down, t)[:, 0, 0].real
    np.testing.assert_allclose(p_up, np.sin(np.pi * nu_r * t) ** 2, atol=1e-9)


def test_detuned_nutation():
    g, nu, b1, delta = G_E, 9.8, 0.05, 0.6
    s = single(g)
    B = _resonance(g, nu) + delta / (g * MU_B_MHZ_PER_T)
    G = build_generator(s, B, drive=DriveSpec(nu, b1))
    nu_r = g * MU_B_MHZ_PER_T * b1 * 1e-3 / 2
    W = np.hypot(nu_r, delta)
    t = np.linspace(0, 3 / W, 121)
    p_up = propagate(G, np.diag([0.0, 1.0]).astype(complex), t)[:, 0, 0].real
    np.testing.assert_allclose(p_up, (nu_r / W) ** 2 * np.sin(np.pi * W * t) ** 2, atol=1e-9)


def test_zero_drive_equals_static_rotating_generator(da):
    G0 = build_generator(da, 0.35, FIG4, DriveSpec(9.8, 0.0))
    L0, L1 = field_linear_generator(da, FIG4, DriveSpec(9.8, 0.0))
    np.testing.assert_allclose(G0.matrix, L0 + 0.35 * L1, atol=1e-9)
    Gd = build_generator(da, 0.35, FIG4, DriveSpec(9.8, 0.01))
    assert np.abs(Gd.matrix - G0.matrix).max() > 0


def test_zero_generator_identity():
    rho = random_density(np.random.default_rng(0), 4)
    traj = propagate(np.zeros((16, 16)), rho, np.linspace(0, 5, 6))
    assert np.abs(traj - rho).max() == 0


def test_unitary_purity_conserved(dqa):
    rho = random_density(np.random.default_rng(1), 8)
    traj = propagate(build_generator(dqa, 1.24), rho, np.linspace(0, 0.05, 51))
    pur = np.einsum("tij,tji->t", traj, traj).real
    assert np.abs(pur - pur[0]).max() < 1e-9


def test_expectation_trivial():
    s = single()
    G = build_generator(s, 0.35)
    up = np.diag([1.0, 0.0]).astype(complex)
    traj = propagate(G, up, np.linspace(0, 1, 11))
    np.testing.assert_allclose(expectation(traj, np.eye(2)), 1.0, atol=1e-14)
    np.testing.assert_allclose(expectation(traj, spin_operator(s, "S", "z")), 0.5, atol=1e-14)


def test_trace_hermiticity_positivity_with_dissipation(dqa):
    no_recomb = DissipationSpec(t1_us=2.0, t2_us=0.5)
    G = build_generator(dqa, 1.24, no_recomb, DriveSpec(34.0, 0.05))
    Gr = build_generator(dqa, 1.24, FIG4, DriveSpec(34.0, 0.05))
    for rp in (Singlet(), Polarized(1)):
        rho = assemble_initial(rp, SensorState("down"), dqa)
        t = np.linspace(0, 5, 101)
        assert_physical(propagate(G, rho, t))
        traj = propagate(Gr, rho, t)
        assert_physical(traj, trace=False)
        assert np.all(np.diff(np.trace(traj, axis1=-2, axis2=-1).real) <= 1e-12)


@settings(max_examples=15, deadline=None)
@given(B=st.floats(0.05, 1.5), seed=st.integers(0, 2**31 - 1))
def test_invariants_random_states(B, seed):
    s = make_da()
    spec = DissipationSpec(t1_us=2.0, t2_us=0.5)
    G = build_generator(s, B, spec, DriveSpec(9.8, 0.1))
    traj = propagate(G, random_density(np.random.default_rng(seed), 4), np.linspace(0, 5, 26))
    assert_physical(traj)
    assert max(G.eigvals().real) <= 1e-9


def test_dissipativity_full_generator(dqa):
    G = build_generator(dqa, 0.35, FIG4, DriveSpec(9.8, 0.01))
    assert G.eigvals().real.max() <= 1e-9


def test_lab_frame_consistency(da):
    B, nu = 0.35, 9.8
    rho0 = random_density(np.random.default_rng(3), 4)
    t = np.linspace(0, 0.01, 41)
    rot = build_generator(da, B, FIG4, DriveSpec(nu, 0.0))
    lab = build_generator(da, B, FIG4)
    back = to_lab_frame(propagate(rot, rho0, t), da, t, rot.frame_GHz)
    direct = propagate(lab, rho0, t)
    S = total_spin(da, "x")
    assert np.abs(expectation(back, S) - expectation(direct, S)).max() < 1e-6
    assert np.abs(back - direct).max() < 1e-6


def _fig4_three_spin():
    s = make_dqa()
    return s, build_generator(s, 0.3495, FIG4, DriveSpec(9.8, 0.01))


def test_propagate_matches_dense_oracle():
    s, G = _fig4_three_spin()
    rho0 = assemble_initial(Singlet(), SensorState("down"), s)
    rng = np.random.default_rng(42)
    t = np.sort(rng.uniform(0, 2.0, 10))
    traj = propagate(G, rho0, t)
    v0 = rho0.reshape(-1)
    for k, tk in enumerate(t):
        ref = expm_multiply(G.matrix * tk, v0).reshape(8, 8)
        assert np.abs(traj[k] - ref).max() < 1e-8


def test_uniform_grid_caching_matches_oracle():
    s, G = _fig4_three_spin()
    rho0 = assemble_initial(Polarized(1), SensorState("down"), s)
    t = np.linspace(0, 1.0, 201)
    traj = propagate(G, rho0, t)
    ref = expm_multiply(G.matrix, rho0.reshape(-1), start=0, stop=1.0, num=201, endpoint=True)
    assert np.abs(traj.reshape(201, -1) - ref).max() < 1e-8
    Sy = total_spin(s, "y")
    ref_sig = expectation(ref.reshape(201, 8, 8), Sy)
    assert np.abs(expectation_series(G, rho0, t, Sy) - ref_sig).max() < 1e-8


def test_batched_propagation_matches_single():
    s = make_da()
    L0, L1 = field_linear_generator(s, FIG4, DriveSpec(9.8, 0.01))
    Bs = np.array([0.349, 0.3495, 0.35])
    rho0 = assemble_initial(Singlet(), SensorState(), s)
    t = np.linspace(0, 0.3, 31)
    batch = propagate(L0[None] + Bs[:, None, None] * L1[None], rho0, t)
    for k, B in enumerate(Bs):
        single_ = propagate(build_generator(s, B, FIG4, DriveSpec(9.8, 0.01)), rho0, t)
        assert np.abs(batch[k] - single_).max() < 1e-10


def test_window_expectation_matches_quadrature(da):
    G = build_generator(da, 0.3495, FIG4, DriveSpec(9.8, 0.05))
    rho0 = assemble_initial(Singlet(), SensorState(), da)
    Sy = total_spin(da, "y")
    exact = window_expectation(G, rho0, (0.1, 0.3), Sy)
    ref, _ = quad(lambda x: expectation_series(G, rho0, [x], Sy)[0], 0.1, 0.3, epsabs=1e-13, limit=200)
    assert exact == pytest.approx(ref / 0.2, abs=1e-10)


def test_physicality_guard():
    with pytest.raises(DissipationError, match="physicality guard"):
        DissipationSpec(t1_us=1.0, t2_us=2.5)
    with pytest.raises(DissipationError):
        DissipationSpec(t1_us=-1.0)
