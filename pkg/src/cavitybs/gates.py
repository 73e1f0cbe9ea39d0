"""Beamsplitter, phase shifter, displacement and state preparation.

Each gate works in two fidelity modes. ``ideal`` applies the exact unitary
instantly. ``physical`` runs the finite-duration dynamics with Kerr, photon
loss and dephasing. Coupler excitation is not sampled. Each physical
beamsplitter records its excitation probability in the returned
:class:`GateRecord` for analytic post-selection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .device import DeviceParams, swap_duration
from .errors import BadArgument, TruncationTooSmall
from .evolution import (TWO_PI, CollapseChannel, HamiltonianTerm, bilinear_hamiltonian,
                        envelope_for_duration, envelope_for_theta, evolve, evolve_envelope,
                        kerr_hamiltonian)
from .fock import (LEAKAGE_TOLERANCE, ModeSpace, QuantumState, annihilation_op, fock_state)

IDEAL, PHYSICAL = "ideal", "physical"
MODES = (IDEAL, PHYSICAL)
BS_THETA = math.pi / 4
SWAP_THETA = math.pi / 2
# With this phase the exchange maps a -> (a - b)/sqrt(2) at theta = pi/4, so the
# parity of Alice after the splitter equals the swap operator on the inputs.
SWAP_TEST_PHI = math.pi / 2


@dataclass(frozen=True)
class BeamsplitterSpec:
    theta: float | None = BS_THETA
    phi: float = 0.0
    mode: str = IDEAL
    duration: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadArgument(f"unknown fidelity mode {self.mode!r}")
        if (self.theta is None) == (self.duration is None):
            raise BadArgument("give exactly one of theta or duration")
        if self.theta is not None and self.theta < 0:
            raise BadArgument("theta must be >= 0")
        if self.duration is not None and self.duration < 0:
            raise BadArgument("duration must be >= 0")


@dataclass(frozen=True)
class GateRecord:
    name: str
    duration: float = 0.0
    p_exc: float = 0.0
    leakage: float = 0.0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("gate duration must be >= 0")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise BadArgument(f"unknown fidelity mode {mode!r}")


def cavity_channels(space: ModeSpace, params: DeviceParams, drive_on: bool = False) -> list[CollapseChannel]:
    """Photon loss (a, b) and number dephasing of both cavities.

    The dephasing channel is L = n with rate 2/Tphi so that the |0><1|
    coherence decays as exp(-t/Tphi).
    """
    factor = params.drive_dephasing_factor if drive_on else 1.0
    out = []
    for mode, t1, tphi in ((0, params.t1_a, params.tphi_a), (1, params.t1_b, params.tphi_b)):
        out.append(CollapseChannel(space.lowering(mode), 1.0 / t1, f"loss{mode}"))
        out.append(CollapseChannel(space.number(mode), 2.0 / tphi * factor, f"dephasing{mode}"))
    return [c for c in out if c.rate > 0]


def kerr_term(space: ModeSpace, params: DeviceParams, drive_on: bool) -> HamiltonianTerm:
    if drive_on:
        return kerr_hamiltonian(space, params.chi_aa, params.chi_bb, params.chi_ab)
    return kerr_hamiltonian(space, params.bare_chi_aa, params.bare_chi_bb, params.chi_ab)


def sector_overflow(state: QuantumState) -> float:
    """Weight in total-photon-number sectors that the truncation cuts into."""
    p = state.probabilities().reshape(state.space.dims)
    total = np.add.outer(*[np.arange(d) for d in state.space.dims])
    return float(p[total >= min(state.space.dims)].sum())


def top_level_population(state: QuantumState) -> float:
    return max(float(state.mode_probabilities(m)[-1]) for m in range(state.space.n_modes))


def _guard_top_level(state: QuantumState, name: str,
                     tolerance: float = LEAKAGE_TOLERANCE) -> tuple[QuantumState, float]:
    top = top_level_population(state)
    if top > tolerance:
        msg = f"{name}: top Fock level holds {top:.3g} of the population"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return state.replace(state.data, extra_leakage=top, warning=msg), top
    return state, 0.0


@lru_cache(maxsize=32)
def _exchange_sectors(dims: tuple[int, int]) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]:
    """Eigensystems of a b^dag + a^dag b restricted to each total-photon-number sector."""
    da, db = dims
    sectors = []
    for total in range(da + db - 1):
        ns = np.arange(max(0, total - db + 1), min(total, da - 1) + 1)
        idx = ns * db + (total - ns)
        # <n-1, m+1| a b^dag |n, m> = sqrt(n) sqrt(m+1)
        off = np.sqrt(ns[1:] * (total - ns[1:] + 1.0))
        gen = np.diag(off, 1) + np.diag(off, -1)
        energies, vecs = np.linalg.eigh(gen)
        for arr in (idx, energies, vecs):
            arr.flags.writeable = False
        sectors.append((idx, energies, vecs))
    return tuple(sectors)


def _sector_blocks(dims: tuple[int, int], theta: float) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(idx, (vecs * np.exp(-1j * theta * energies)) @ vecs.T)
            for idx, energies, vecs in _exchange_sectors(dims)]


def beamsplitter_unitary(space: ModeSpace, theta: float, phi: float) -> np.ndarray:
    """exp[-i theta (e^{i phi} a b^dag + e^{-i phi} a^dag b)] on the truncated space."""
    u0 = np.zeros((space.total_dim, space.total_dim), complex)
    for idx, block in _sector_blocks(space.dims, theta):
        u0[np.ix_(idx, idx)] = block
    r = np.exp(1j * phi * space.occupation_grid(1))
    return (r[:, None] * u0) * r.conj()[None, :]


def apply_beamsplitter(data: np.ndarray, space: ModeSpace, theta: float, phi: float) -> np.ndarray:
    """Apply the ideal splitter sector by sector without forming the full matrix."""
    r = np.exp(1j * phi * space.occupation_grid(1))
    blocks = _sector_blocks(space.dims, theta)
    if data.ndim == 1:
        v = r.conj() * data
        out = np.empty_like(v)
        for idx, block in blocks:
            out[idx] = block @ v[idx]
        return r * out
    rho = r.conj()[:, None] * data * r[None, :]
    tmp = np.empty_like(rho)
    for idx, block in blocks:
        tmp[idx, :] = block @ rho[idx, :]
    out = np.empty_like(rho)
    for idx, block in blocks:
        out[:, idx] = tmp[:, idx] @ block.conj().T
    return r[:, None] * out * r.conj()[None, :]


def beamsplitter(state: QuantumState, spec: BeamsplitterSpec,
                 params: DeviceParams) -> tuple[QuantumState, GateRecord]:
    space = state.space
    overflow = sector_overflow(state)
    if overflow > LEAKAGE_TOLERANCE:
        raise TruncationTooSmall(
            f"beamsplitter input has {overflow:.3g} weight in photon-number sectors "
            f"beyond truncation {space.dims}")

    if spec.mode == IDEAL:
        if spec.theta is not None:
            theta = spec.theta
        else:
            theta = TWO_PI * params.g * spec.duration
        out = state.replace(apply_beamsplitter(state.data, space, theta, spec.phi))
        out, top = _guard_top_level(out, "bs")
        return out, GateRecord("bs", 0.0, 0.0, top)

    if spec.duration is not None:
        env = envelope_for_duration(spec.duration, params.ring_time)
    else:
        if spec.theta > 0 and not params.g > 0:
            raise BadArgument("physical beamsplitter needs g > 0")
        env = envelope_for_theta(spec.theta, params.g, params.ring_time) if spec.theta > 0 \
            else envelope_for_duration(0.0, 0.0)
    coupling = bilinear_hamiltonian(space, params.g, spec.phi)
    kerr = kerr_term(space, params, drive_on=True)
    channels = cavity_channels(space, params, drive_on=True)
    out = evolve_envelope(state, coupling, [kerr], channels, env)
    out, top = _guard_top_level(out, "bs")
    p_exc = params.p_exc if env.duration > 0 else 0.0
    return out, GateRecord("bs", env.duration, p_exc, top)


def _normalize_angle(phi: float) -> float:
    return math.fmod(math.fmod(phi, TWO_PI) + TWO_PI, TWO_PI)


def dps(state: QuantumState, phi: float, params: DeviceParams,
        mode: str = IDEAL) -> tuple[QuantumState, GateRecord]:
    """Differential phase e^{i phi n_a} on Alice.

    ``phi`` is the phase per photon. In physical mode the ancilla is held
    excited for phi / (2 pi chi_1) while the cavities idle.
    """
    _check_mode(mode)
    phi = _normalize_angle(phi)
    duration = 0.0
    if mode == PHYSICAL and phi > 0:
        duration = phi / (TWO_PI * params.chi_1)
        state = idle(state, duration, params)
    phase = np.exp(1j * phi * state.space.occupation_grid(0))
    if state.is_pure:
        out = state.replace(phase * state.data)
    else:
        out = state.replace(phase[:, None] * state.data * phase.conj()[None, :])
    return out, GateRecord("dps", duration)


def idle(state: QuantumState, t: float, params: DeviceParams) -> QuantumState:
    """Free evolution with bare Kerr and cavity decoherence."""
    if t == 0:
        return state
    space = state.space
    return evolve(state, [kerr_term(space, params, drive_on=False)],
                  cavity_channels(space, params), t)


def wait(state: QuantumState, t: float, params: DeviceParams,
         mode: str = IDEAL) -> tuple[QuantumState, GateRecord]:
    _check_mode(mode)
    if t < 0:
        raise BadArgument("wait time must be >= 0")
    if mode == PHYSICAL:
        state = idle(state, t, params)
    return state, GateRecord("wait", t if mode == PHYSICAL else 0.0)


def displacement_operator(dim: int, alpha: complex) -> np.ndarray:
    a = annihilation_op(dim)
    k = 1j * (alpha * a.conj().T - np.conj(alpha) * a)   # Hermitian
    energies, vecs = np.linalg.eigh(k)
    return (vecs * np.exp(-1j * energies)) @ vecs.conj().T


def displace(state: QuantumState, mode: int, alpha: complex,
             tolerance: float = LEAKAGE_TOLERANCE) -> QuantumState:
    alpha = complex(alpha)
    if alpha == 0:
        return state
    space = state.space
    u = space.embed(displacement_operator(space.dims[mode], alpha), mode)
    out = state.replace(u @ state.data if state.is_pure else u @ state.data @ u.conj().T)
    top = float(out.mode_probabilities(mode)[-1])
    if top > tolerance:
        raise TruncationTooSmall(
            f"displacement by {alpha} puts {top:.3g} in the top level of mode {mode}")
    return out


def _load_two_photons(space: ModeSpace) -> np.ndarray:
    # unitary permutation |0> <-> |2> on Alice, standing in for the optimized state-prep pulse
    perm = np.arange(space.dims[0])
    perm[0], perm[2] = 2, 0
    single = np.eye(space.dims[0])[perm]
    return space.embed(single.astype(complex), 0)


def prepare_21(params: DeviceParams, mode: str = IDEAL,
               dims: tuple[int, int] = (5, 5)) -> tuple[QuantumState, GateRecord]:
    """Prepare |2,1> by swapping a photon from Alice to Bob, then loading Alice."""
    _check_mode(mode)
    space = ModeSpace(dims)
    if min(dims) < 4:
        raise BadArgument("state-21 preparation needs dims >= 4 per mode")
    if mode == IDEAL:
        return fock_state(space, (2, 1)), GateRecord("prep21")
    state = fock_state(space, (1, 0))
    state, rec = beamsplitter(state, BeamsplitterSpec(theta=SWAP_THETA, phi=0.0, mode=PHYSICAL), params)
    u = _load_two_photons(space)
    state = state.density()
    state = state.replace(u @ state.data @ u.conj().T)
    return state, GateRecord("prep21", rec.duration, rec.p_exc, rec.leakage)


def fidelity_to_fock(state: QuantumState, occupations) -> float:
    return float(state.probabilities()[state.space.flatten(occupations)])


def ideal_swap_time(params: DeviceParams) -> float:
    return swap_duration(params.g)
