import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.linalg import expm

from cavitybs.errors import InvalidHamiltonian, InvalidSpace, StateKindError, StepTooLarge
from cavitybs.evolution import (CollapseChannel, Envelope, HamiltonianTerm, bilinear_hamiltonian,
                                default_dt, effective_theta, envelope_for_duration,
                                envelope_for_theta, evolve_envelope, invariant_support,
                                kerr_hamiltonian, lindblad_evolve, propagate_unitary,
                                spectral_propagator, total_hamiltonian)
from cavitybs.fock import ModeSpace, QuantumState, fock_state, random_pure_state

SPACE = ModeSpace((4, 4))


def liouvillian_oracle(h, channels):
    """Column-stacked superoperator, so vec(rho(t)) = expm(L t) vec(rho)."""
    n = h.shape[0]
    eye = np.eye(n)
    sup = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for c in channels:
        op = c.operator
        ldl = op.conj().T @ op
        sup += c.rate * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, ldl) - 0.5 * np.kron(ldl.T, eye))
    return sup


def evolve_oracle(rho, h, channels, t):
    n = rho.shape[0]
    vec = rho.reshape(-1, order="F")
    return (expm(liouvillian_oracle(h, channels) * t) @ vec).reshape(n, n, order="F")


def test_bilinear_zero_coupling():
    assert np.count_nonzero(bilinear_hamiltonian(SPACE, 0.0, 0.3).matrix) == 0


@pytest.mark.parametrize("phi", [0.0, 0.4, math.pi / 2, 2.0])
def test_bilinear_matrix_element(phi):
    g = 0.034
    h = bilinear_hamiltonian(SPACE, g, phi).matrix
    i10, i01 = SPACE.flatten((1, 0)), SPACE.flatten((0, 1))
    assert h[i01, i10] == pytest.approx(2 * math.pi * g * np.exp(1j * phi), abs=1e-15)


def test_bilinear_conserves_total_number():
    h = bilinear_hamiltonian(SPACE, 0.05, 0.7).matrix
    n = SPACE.number(0) + SPACE.number(1)
    assert np.max(np.abs(h @ n - n @ h)) < 1e-12


def test_bilinear_needs_two_modes():
    with pytest.raises(InvalidSpace):
        bilinear_hamiltonian(ModeSpace((4,)), 0.1, 0.0)


def test_kerr_convention():
    assert np.count_nonzero(kerr_hamiltonian(SPACE, 0, 0, 0).matrix) == 0
    h = kerr_hamiltonian(SPACE, 0.008, 0, 0).matrix
    assert h[SPACE.flatten((2, 0)), SPACE.flatten((2, 0))] == pytest.approx(-2 * math.pi * 0.008)
    assert h[SPACE.flatten((1, 0)), SPACE.flatten((1, 0))] == 0
    h = kerr_hamiltonian(SPACE, 0, 0, 0.001).matrix
    assert h[SPACE.flatten((1, 1)), SPACE.flatten((1, 1))] == pytest.approx(-2 * math.pi * 0.001)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0


def test_hamiltonian_term_rejects_non_hermitian():
    with pytest.raises(InvalidHamiltonian):
        HamiltonianTerm("bad", np.array([[0, 1], [0, 0]]))
    with pytest.raises(InvalidHamiltonian):
        total_hamiltonian([])


def test_propagate_zero_time_is_identity():
    psi = fock_state(SPACE, (1, 2))
    assert propagate_unitary(psi, bilinear_hamiltonian(SPACE, 0.1, 0), 0.0) is psi


def test_swap_by_matrix_exponential():
    g = 0.034
    t = 1 / (4 * g)   # theta = 2 pi g t = pi / 2
    out = propagate_unitary(fock_state(SPACE, (1, 0)), bilinear_hamiltonian(SPACE, g, 0.0), t)
    assert abs(out.data[SPACE.flatten((0, 1))]) == pytest.approx(1, abs=1e-12)


def test_single_photon_sign_convention():
    g, t = 0.034, 1.3
    theta = 2 * math.pi * g * t
    out = propagate_unitary(fock_state(SPACE, (1, 0)), bilinear_hamiltonian(SPACE, g, 0.0), t)
    assert out.data[SPACE.flatten((1, 0))] == pytest.approx(math.cos(theta), abs=1e-12)
    assert out.data[SPACE.flatten((0, 1))] == pytest.approx(-1j * math.sin(theta), abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_spectral_matches_expm_oracle(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    h = (m + m.conj().T) / 2
    t = rng.uniform(0, 3)
    assert np.linalg.norm(spectral_propagator(h, t) - expm(-1j * h * t), 2) < 1e-9


@given(st.integers(0, 2**32 - 1), st.floats(0, 5), st.floats(0, 5))
def test_semigroup_and_conservation(seed, t1, t2):
    rng = np.random.default_rng(seed)
    space = ModeSpace((5, 5))
    h = bilinear_hamiltonian(space, 0.04, 0.3)
    psi = random_pure_state(space, rng)
    split = propagate_unitary(propagate_unitary(psi, h, t1), h, t2)
    joint = propagate_unitary(psi, h, t1 + t2)
    assert np.max(np.abs(split.data - joint.data)) < 1e-9
    n = space.number(0) + space.number(1)
    assert abs(joint.expect(n) - psi.expect(n)) < 1e-10
    assert abs(joint.expect(h.matrix) - psi.expect(h.matrix)) < 1e-10
    joint.check()


def test_envelope_integral_closed_form_matches_quadrature():
    env = Envelope(plateau=2.0, ring=0.1)
    numeric, _ = quad(lambda t: float(env.value(t)), 0, env.duration, points=[0.1, 2.1], epsabs=1e-13)
    assert numeric == pytest.approx(env.integral(), abs=1e-9)
    assert sum(d * a for d, a in env.segments()) == pytest.approx(env.integral(), abs=1e-12)


def test_effective_theta():
    assert effective_theta(0.034, Envelope(0.0, 0.0)) == 0
    g = 0.034
    assert effective_theta(g, Envelope(1 / (8 * g), 0.0)) == pytest.approx(math.pi / 4, abs=1e-12)
    # the rounded 3.676 us misses pi/4 by ~1e-4
    assert abs(effective_theta(g, Envelope(3.676, 0.0)) - math.pi / 4) > 1e-5
    env = envelope_for_theta(math.pi / 4, g, 0.1)
    assert effective_theta(g, env) == pytest.approx(math.pi / 4, abs=1e-12)
    assert env.duration == pytest.approx(1 / (8 * g) + 0.1)


def test_short_envelopes():
    env = envelope_for_duration(0.1, 0.1)
    assert env.plateau == 0 and env.ring == pytest.approx(0.05)
    tiny = envelope_for_theta(1e-3, 0.034, 0.1)
    assert effective_theta(0.034, tiny) == pytest.approx(1e-3)


def test_lindblad_without_channels_matches_unitary(rng):
    psi = random_pure_state(SPACE, rng)
    h = [bilinear_hamiltonian(SPACE, 0.05, 0.2), kerr_hamiltonian(SPACE, 0.008, 0.005, 0.001)]
    ref = propagate_unitary(psi, h, 4.0).density().data
    out = lindblad_evolve(psi.density(), h, [], 4.0)
    assert np.max(np.abs(out.data - ref)) < 1e-8


def test_amplitude_damping():
    space = ModeSpace((3,))
    kappa = 1 / 450
    rho = QuantumState(space, np.diag([0, 1, 0]).astype(complex), "density")
    h = HamiltonianTerm("zero", np.zeros((3, 3)))
    for t in (1.0, 30.0, 200.0):
        out = lindblad_evolve(rho, [h], [CollapseChannel(space.lowering(0), kappa)], t)
        assert out.data[1, 1].real == pytest.approx(math.exp(-kappa * t), abs=1e-6)


def test_dephasing_channel_defines_tphi():
    space = ModeSpace((3,))
    tphi = 1125.0
    v = np.array([1, 1, 0]) / math.sqrt(2)
    rho = QuantumState(space, v).density()
    h = HamiltonianTerm("zero", np.zeros((3, 3)))
    out = lindblad_evolve(rho, [h], [CollapseChannel(space.number(0), 2 / tphi)], 100.0)
    assert abs(out.data[0, 1]) == pytest.approx(0.5 * math.exp(-100 / tphi), abs=1e-9)


def test_lindblad_matches_superoperator_oracle(rng):
    space = ModeSpace((3, 3))
    h = [bilinear_hamiltonian(space, 0.05, 0.4), kerr_hamiltonian(space, 0.008, 0.005, 0.001)]
    channels = [CollapseChannel(space.lowering(0), 0.02), CollapseChannel(space.lowering(1), 0.01),
                CollapseChannel(space.number(0), 0.03), CollapseChannel(space.number(1), 0.01)]
    rho = random_pure_state(space, rng).density()
    out = lindblad_evolve(rho, h, channels, 5.0)
    ref = evolve_oracle(rho.data, total_hamiltonian(h), channels, 5.0)
    assert np.max(np.abs(out.data - ref)) < 1e-8
    # a Fock input is integrated on its invariant subspace only; same answer
    fock = fock_state(space, (1, 1)).density()
    out = lindblad_evolve(fock, h, channels, 5.0)
    ref = evolve_oracle(fock.data, total_hamiltonian(h), channels, 5.0)
    assert np.max(np.abs(out.data - ref)) < 1e-8


def test_invariant_support_of_fock_input():
    space = ModeSpace((6, 6))
    h = bilinear_hamiltonian(space, 0.034, 0.0).matrix
    channels = [CollapseChannel(space.lowering(0), 0.01), CollapseChannel(space.number(1), 0.01)]
    keep = invariant_support(fock_state(space, (1, 1)).density().data, h, channels)
    assert sorted(space.unflatten(i) for i in keep) == sorted(
        (n, m) for n in range(3) for m in range(3) if n + m <= 2)


def test_lindblad_trace_drift(params):
    space = ModeSpace((4, 4))
    h = [bilinear_hamiltonian(space, params.g, 0.0), kerr_hamiltonian(space, 0.008, 0.005, 0.001)]
    channels = [CollapseChannel(space.lowering(m), 1 / 450) for m in (0, 1)] + \
               [CollapseChannel(space.number(m), 2 / 1125) for m in (0, 1)]
    rho = random_pure_state(space, np.random.default_rng(5)).density()
    out = lindblad_evolve(rho, h, channels, 10.0)
    assert abs(out.trace() - 1) < 1e-8
    out.check()


def test_lindblad_guards():
    space = ModeSpace((3,))
    h = HamiltonianTerm("x", np.diag([0.0, 50.0, 100.0]))
    rho = QuantumState(space, np.eye(3)[1]).density()
    assert lindblad_evolve(rho, [h], [], 0.0) is rho
    with pytest.raises(StepTooLarge):
        lindblad_evolve(rho, [h], [], 1.0, dt=0.1)
    with pytest.raises(StateKindError):
        lindblad_evolve(QuantumState(space, np.eye(3)[1]), [h], [], 1.0)
    with pytest.raises(ValueError):
        CollapseChannel(space.lowering(0), -1.0)


def test_default_dt_bounds():
    assert default_dt(None) == 0.5
    assert default_dt(None, g=0.034) == pytest.approx(0.01 / 0.034)
    assert default_dt(None, tphi=200.0) == pytest.approx(0.2)


def test_segment_refinement_converges(params):
    space = ModeSpace((3, 3))
    coupling = bilinear_hamiltonian(space, params.g, 0.0)
    static = [kerr_hamiltonian(space, 0.008, 0.005, 0.001)]
    env = Envelope(1.0, 0.1)
    rho = fock_state(space, (1, 0))
    coarse = evolve_envelope(rho, coupling, static, [], env, per_ramp=64)
    fine = evolve_envelope(rho, coupling, static, [], env, per_ramp=128)
    assert np.max(np.abs(coarse.data - fine.data)) < 1e-6
