import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from cavitybs.device import DeviceParams
from cavitybs.errors import BadArgument, TruncationTooSmall
from cavitybs.fock import ModeSpace, QuantumState, coherent_state, fock_state, parity_op, product_state
from cavitybs.gates import (BS_THETA, PHYSICAL, SWAP_TEST_PHI, SWAP_THETA, BeamsplitterSpec,
                            GateRecord, apply_beamsplitter, beamsplitter, beamsplitter_unitary,
                            displace, dps, fidelity_to_fock, prepare_21, wait)

BS = BeamsplitterSpec(theta=BS_THETA)
SWAP = BeamsplitterSpec(theta=SWAP_THETA)


def pops(state, *occs):
    return [float(state.probabilities()[state.space.flatten(o)]) for o in occs]


def interior_state(space, rng, complex_amps=True):
    """Random pure state on occupations n_a + n_b <= min(dims) - 2, clear of every top level."""
    v = np.zeros(space.total_dim, complex)
    low = [i for i in range(space.total_dim) if sum(space.unflatten(i)) <= min(space.dims) - 2]
    v[low] = rng.normal(size=len(low))
    if complex_amps:
        v[low] += 1j * rng.normal(size=len(low))
    return QuantumState(space, v / np.linalg.norm(v))


def expm_oracle(space, theta, phi):
    a = space.lowering(0)
    b = space.lowering(1)
    gen = np.exp(1j * phi) * a @ b.conj().T
    return expm(-1j * theta * (gen + gen.conj().T))


def test_hom_ideal(params):
    out, rec = beamsplitter(fock_state(ModeSpace((4, 4)), (1, 1)), BS, params)
    p11, p20, p02 = pops(out, (1, 1), (2, 0), (0, 2))
    assert p11 <= 1e-12
    assert p20 == pytest.approx(0.5, abs=1e-12) and p02 == pytest.approx(0.5, abs=1e-12)
    assert rec == GateRecord("bs", 0.0, 0.0, 0.0)


@given(st.integers(0, 3), st.integers(0, 3))
def test_swap_exchanges_populations(n, m):
    space = ModeSpace((7, 7))
    out, _ = beamsplitter(fock_state(space, (n, m)), SWAP, DeviceParams())
    assert pops(out, (m, n))[0] == pytest.approx(1, abs=1e-12)


def test_three_photon_distribution_against_restricted_oracle(params):
    space = ModeSpace((5, 5))
    out, _ = beamsplitter(fock_state(space, (2, 1)), BS, params)
    got = pops(out, (3, 0), (2, 1), (1, 2), (0, 3))
    # oracle: exchange generator on the 4-dim sector n_a + n_b = 3, exponentiated directly
    basis = [(3, 0), (2, 1), (1, 2), (0, 3)]
    gen = np.zeros((4, 4))
    for j, (n, m) in enumerate(basis):
        for i, (n2, m2) in enumerate(basis):
            if n2 == n - 1 and m2 == m + 1:
                gen[i, j] = math.sqrt(n * (m + 1))
    gen = gen + gen.T
    v = expm(-1j * BS_THETA * gen) @ np.eye(4)[1]
    np.testing.assert_allclose(got, np.abs(v) ** 2, atol=1e-12)
    np.testing.assert_allclose(got, [0.375, 0.125, 0.125, 0.375], atol=1e-12)


@pytest.mark.parametrize("theta,phi", [(0.3, 0.0), (BS_THETA, SWAP_TEST_PHI), (1.1, 2.5)])
def test_sector_unitary_matches_dense_expm(theta, phi):
    # below the truncation corner the sector blocks are exact
    space = ModeSpace((4, 4))
    u = beamsplitter_unitary(space, theta, phi)
    ref = expm_oracle(space, theta, phi)
    low = [i for i in range(space.total_dim) if sum(space.unflatten(i)) < 4]
    np.testing.assert_allclose(u[np.ix_(low, low)], ref[np.ix_(low, low)], atol=1e-12)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(16), atol=1e-12)


def test_apply_matches_matrix(rng):
    space = ModeSpace((5, 4))
    u = beamsplitter_unitary(space, 0.7, 0.3)
    psi = rng.normal(size=20) + 1j * rng.normal(size=20)
    np.testing.assert_allclose(apply_beamsplitter(psi, space, 0.7, 0.3), u @ psi, atol=1e-12)
    rho = np.outer(psi, psi.conj())
    np.testing.assert_allclose(apply_beamsplitter(rho, space, 0.7, 0.3), u @ rho @ u.conj().T, atol=1e-10)


def test_bs_sign_convention(params):
    space = ModeSpace((3, 3))
    out, _ = beamsplitter(fock_state(space, (1, 0)), BeamsplitterSpec(theta=0.4, phi=0.9), params)
    assert out.data[space.flatten((0, 1))] == pytest.approx(-1j * np.exp(1j * 0.9) * math.sin(0.4), abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0, 6.3), st.floats(0, 6.3))
def test_total_number_distribution_conserved(seed, theta, phi):
    space = ModeSpace((6, 6))
    psi = interior_state(space, np.random.default_rng(seed))
    out, _ = beamsplitter(psi, BeamsplitterSpec(theta=theta, phi=phi), DeviceParams())
    total = np.add.outer(np.arange(6), np.arange(6)).ravel()
    before = np.bincount(total, psi.probabilities())
    after = np.bincount(total, out.probabilities())
    np.testing.assert_allclose(before, after, atol=1e-12)


def test_hom_parity_law_identical_inputs():
    rng = np.random.default_rng(7)
    single = ModeSpace((6,))
    spec = BeamsplitterSpec(theta=BS_THETA, phi=SWAP_TEST_PHI)
    for _ in range(50):
        v = np.zeros(6, complex)
        v[:3] = rng.normal(size=3) + 1j * rng.normal(size=3)   # n <= 2 keeps 2n off the top level
        psi = QuantumState(single, v / np.linalg.norm(v))
        out, _ = beamsplitter(product_state(psi, psi), spec, DeviceParams())
        assert out.expect(out.space.embed(parity_op(6), 0)).real == pytest.approx(1, abs=1e-9)


def test_swap_twice_restores_populations(rng):
    space = ModeSpace((5, 5))
    psi = interior_state(space, rng, complex_amps=False)
    out, _ = beamsplitter(psi, SWAP, DeviceParams())
    out, _ = beamsplitter(out, SWAP, DeviceParams())
    np.testing.assert_allclose(out.probabilities(), psi.probabilities(), atol=1e-12)


def test_mz_dark_state(params):
    space = ModeSpace((4, 4))
    state, _ = beamsplitter(fock_state(space, (1, 1)), BS, params)
    state, _ = dps(state, math.pi / 2, params)
    for k in range(3):
        state, _ = beamsplitter(state, BS, params)
        if k < 2:
            assert pops(state, (1, 1))[0] <= 1e-12
    # a pi per-photon phase leaves the NOON-like state unchanged: no dark state
    state, _ = beamsplitter(fock_state(space, (1, 1)), BS, params)
    state, _ = dps(state, math.pi, params)
    state, _ = beamsplitter(state, BS, params)
    assert pops(state, (1, 1))[0] == pytest.approx(1, abs=1e-12)


def test_dps_basics(params):
    space = ModeSpace((3, 3))
    psi = fock_state(space, (1, 0))
    out, rec = dps(psi, 0.0, params)
    np.testing.assert_array_equal(out.data, psi.data)
    assert rec.duration == 0
    _, rec = dps(psi, math.pi, params, mode=PHYSICAL)
    assert rec.duration == pytest.approx(0.495, abs=1e-3)
    out, _ = dps(psi, 2 * math.pi + 0.3, params)
    assert out.data[space.flatten((1, 0))] == pytest.approx(np.exp(0.3j))


def test_wait(params):
    psi = fock_state(ModeSpace((3, 3)), (1, 0))
    assert wait(psi, 5.0, params)[1].duration == 0
    out, rec = wait(psi, 45.0, params, mode=PHYSICAL)
    assert rec.duration == 45.0
    assert pops(out, (1, 0))[0] == pytest.approx(math.exp(-0.1), abs=1e-6)
    with pytest.raises(BadArgument):
        wait(psi, -1.0, params)


@pytest.mark.parametrize("alpha", [0.5, 1.0 + 0.5j, 2.0, -1.2j])
def test_displace_vacuum_is_coherent(alpha):
    vac = QuantumState(ModeSpace((20,)), np.eye(20)[0].astype(complex))
    out = displace(vac, 0, alpha)
    ref = coherent_state(20, alpha)
    assert abs(np.vdot(ref.data, out.data)) ** 2 > 1 - 1e-8


def test_displace_group_property(rng):
    space = ModeSpace((20, 3))
    v = np.zeros(60, complex)
    v[:9] = rng.normal(size=9)
    psi = QuantumState(space, v / np.linalg.norm(v))
    assert displace(psi, 0, 0) is psi
    back = displace(displace(psi, 0, 0.8 - 0.3j), 0, -0.8 + 0.3j)
    assert abs(abs(np.vdot(psi.data, back.data)) - 1) < 1e-8


def test_displace_truncation_guard():
    vac = QuantumState(ModeSpace((6,)), np.eye(6)[0].astype(complex))
    with pytest.raises(TruncationTooSmall):
        displace(vac, 0, 2.0)


def test_prepare_21(params):
    state, rec = prepare_21(params)
    assert fidelity_to_fock(state, (2, 1)) == 1
    n = state.space.number(0) + state.space.number(1)
    assert state.expect(n).real == pytest.approx(3)
    state, rec = prepare_21(params, mode=PHYSICAL)
    assert 0.98 <= fidelity_to_fock(state, (2, 1)) <= 0.99
    assert rec.duration == pytest.approx(1 / (4 * params.g) + params.ring_time)
    with pytest.raises(BadArgument):
        prepare_21(params, dims=(3, 3))


def test_physical_reduces_to_ideal_without_decoherence(rng):
    quiet = DeviceParams(t1_a=math.inf, t1_b=math.inf, tphi_a=math.inf, tphi_b=math.inf,
                         chi_aa=0, chi_bb=0, chi_ab=0, bare_chi_aa=0, bare_chi_bb=0)
    space = ModeSpace((4, 4))
    rho = interior_state(space, rng).density()
    for phi in (0.0, 1.3):
        ideal, _ = beamsplitter(rho, BeamsplitterSpec(theta=BS_THETA, phi=phi), quiet)
        phys, _ = beamsplitter(rho, BeamsplitterSpec(theta=BS_THETA, phi=phi, mode=PHYSICAL), quiet)
        trace_distance = 0.5 * np.abs(np.linalg.eigvalsh(ideal.data - phys.data)).sum()
        assert trace_distance < 1e-6


def test_physical_record(params):
    out, rec = beamsplitter(fock_state(ModeSpace((3, 3)), (1, 0)),
                            BeamsplitterSpec(theta=BS_THETA, mode=PHYSICAL), params)
    assert rec.p_exc == params.p_exc
    assert rec.duration == pytest.approx(1 / (8 * params.g) + params.ring_time)
    out, rec = beamsplitter(fock_state(ModeSpace((3, 3)), (1, 0)),
                            BeamsplitterSpec(theta=None, duration=0.0, mode=PHYSICAL), params)
    assert rec.duration == 0 and rec.p_exc == 0


def test_truncation_guard(params):
    # two photons in a dims-2 space cannot be split faithfully
    space = ModeSpace((3, 3))
    psi = fock_state(space, (2, 1))
    with pytest.raises(TruncationTooSmall):
        beamsplitter(psi, BS, params)


def test_spec_validation():
    with pytest.raises(BadArgument):
        BeamsplitterSpec(theta=-0.1)
    with pytest.raises(BadArgument):
        BeamsplitterSpec(theta=None)
    with pytest.raises(BadArgument):
        BeamsplitterSpec(mode="fast")
    with pytest.raises(ValueError):
        GateRecord("x", -1.0)
