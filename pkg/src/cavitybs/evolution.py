"""Effective Hamiltonians and closed / open time evolution.

Hamiltonian matrices are stored in angular units (rad/us) and evolution is
always ``exp(-i H t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidHamiltonian, InvalidSpace, StateKindError, StepTooLarge
from .fock import TOL_CONSTRUCTION, ModeSpace, QuantumState, is_hermitian

TWO_PI = 2.0 * math.pi
SEGMENTS_PER_RAMP = 64
MAX_STEP_SCALE = 0.1


@dataclass(frozen=True, eq=False)
class HamiltonianTerm:
    label: str
    matrix: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or not is_hermitian(m, TOL_CONSTRUCTION):
            raise InvalidHamiltonian(f"term {self.label!r} is not Hermitian")
        object.__setattr__(self, "matrix", m)

    def scaled(self, factor: float) -> "HamiltonianTerm":
        return HamiltonianTerm(self.label, self.matrix, self.scale * factor)


@dataclass(frozen=True, eq=False)
class CollapseChannel:
    operator: np.ndarray
    rate: float
    label: str = ""

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"collapse rate must be >= 0, got {self.rate}")


def _two_mode(space: ModeSpace) -> None:
    if space.n_modes != 2:
        raise InvalidSpace(f"expected a two-mode space, got {space.n_modes} modes")


def bilinear_hamiltonian(space: ModeSpace, g: float, phi: float) -> HamiltonianTerm:
    """Frequency-converting exchange term 2 pi g (e^{i phi} a b^dag + h.c.)."""
    _two_mode(space)
    a, b = space.lowering(0), space.lowering(1)
    ab_dag = a @ b.conj().T
    h = np.exp(1j * phi) * ab_dag
    return HamiltonianTerm("bilinear", TWO_PI * g * (h + h.conj().T))


def kerr_hamiltonian(space: ModeSpace, chi_aa: float, chi_bb: float,
                     chi_ab: float) -> HamiltonianTerm:
    """Diagonal Kerr term; each chi is the frequency shift per photon."""
    _two_mode(space)
    na = space.occupation_grid(0).astype(float)
    nb = space.occupation_grid(1).astype(float)
    diag = -TWO_PI * (chi_aa / 2 * na * (na - 1) + chi_bb / 2 * nb * (nb - 1) + chi_ab * na * nb)
    return HamiltonianTerm("kerr", np.diag(diag).astype(complex))


def total_hamiltonian(terms: HamiltonianTerm | Iterable[HamiltonianTerm]) -> np.ndarray:
    if isinstance(terms, HamiltonianTerm):
        terms = [terms]
    terms = list(terms)
    if not terms:
        raise InvalidHamiltonian("no Hamiltonian terms given")
    h = sum(t.scale * t.matrix for t in terms)
    if not is_hermitian(h, TOL_CONSTRUCTION):
        raise InvalidHamiltonian("Hamiltonian sum is not Hermitian")
    return h


def spectral_propagator(h: np.ndarray, t: float) -> np.ndarray:
    if not is_hermitian(h, TOL_CONSTRUCTION):
        raise InvalidHamiltonian("propagator needs a Hermitian generator")
    energies, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * energies * t)) @ vecs.conj().T


def apply_unitary(state: QuantumState, u: np.ndarray) -> QuantumState:
    if state.is_pure:
        return state.replace(u @ state.data)
    return state.replace(u @ state.data @ u.conj().T)


def propagate_unitary(state: QuantumState, terms, t: float) -> QuantumState:
    if t < 0:
        raise ValueError("evolution time must be >= 0")
    h = total_hamiltonian(terms)
    if t == 0:
        return state
    return apply_unitary(state, spectral_propagator(h, t))


@dataclass(frozen=True)
class Envelope:
    """Flat-top drive envelope with cosine ring-up and ring-down of length ``ring``."""

    plateau: float
    ring: float = 0.0

    def __post_init__(self):
        if self.plateau < 0 or self.ring < 0:
            raise ValueError("envelope durations must be >= 0")

    @property
    def duration(self) -> float:
        return self.plateau + 2 * self.ring

    def integral(self) -> float:
        return self.plateau + self.ring

    def value(self, t):
        t = np.asarray(t, dtype=float)
        r, p = self.ring, self.plateau
        out = np.where((t >= 0) & (t <= self.duration), 1.0, 0.0)
        if r > 0:
            up = (t >= 0) & (t < r)
            down = (t > r + p) & (t <= self.duration)
            out = np.where(up, (1 - np.cos(np.pi * t / r)) / 2, out)
            out = np.where(down, (1 - np.cos(np.pi * (self.duration - t) / r)) / 2, out)
        return out

    def _ramp_integral(self, t0: float, t1: float) -> float:
        # integral of (1 - cos(pi s / r)) / 2 over [t0, t1] within a ramp-up
        r = self.ring
        return (t1 - t0) / 2 - r / (2 * math.pi) * (math.sin(math.pi * t1 / r) - math.sin(math.pi * t0 / r))

    def segments(self, per_ramp: int = SEGMENTS_PER_RAMP) -> list[tuple[float, float]]:
        """Piecewise-constant ``(duration, amplitude)`` pieces with exact area."""
        pieces = []
        if self.ring > 0:
            edges = np.linspace(0, self.ring, per_ramp + 1)
            ramp = [(t1 - t0, self._ramp_integral(t0, t1) / (t1 - t0))
                    for t0, t1 in zip(edges[:-1], edges[1:])]
        else:
            ramp = []
        pieces.extend(ramp)
        if self.plateau > 0:
            pieces.append((self.plateau, 1.0))
        pieces.extend(reversed(ramp))
        return pieces


def envelope_for_duration(duration: float, ring: float) -> Envelope:
    """Envelope of total length ``duration``; short pulses shrink the ramps."""
    ring = min(ring, duration / 2)
    return Envelope(max(duration - 2 * ring, 0.0), ring)


def envelope_for_theta(theta: float, g: float, ring: float) -> Envelope:
    area = theta / (TWO_PI * g)
    if area >= ring:
        return Envelope(area - ring, ring)
    return Envelope(0.0, area)


def effective_theta(g: float, env: Envelope) -> float:
    return TWO_PI * g * env.integral()


def _operator_scale(h: np.ndarray | None, channels: Sequence[CollapseChannel]) -> float:
    scale = 0.0 if h is None else float(np.abs(h).sum(axis=1).max())
    for ch in channels:
        ldl = ch.operator.conj().T @ ch.operator
        scale = max(scale, ch.rate * float(np.abs(ldl).sum(axis=1).max()))
    return scale


def default_dt(h: np.ndarray | None, channels: Sequence[CollapseChannel] = (),
               g: float | None = None, tphi: float | None = None) -> float:
    """Step size: at least 100 steps per exchange period and well inside the RK4 guard."""
    dt = 0.5
    if g:
        dt = min(dt, 0.01 / g)
    if tphi and math.isfinite(tphi):
        dt = min(dt, tphi / 1000)
    scale = _operator_scale(h, channels)
    if scale > 0:
        dt = min(dt, 0.2 * MAX_STEP_SCALE / scale)
    return dt


class _Liouvillian:
    """Right-hand side of the master equation, split into matrix and elementwise parts."""

    def __init__(self, h: np.ndarray, channels: Sequence[CollapseChannel]):
        n = h.shape[0]
        heff = h.astype(complex).copy()
        self.jumps = []
        mask = np.zeros((n, n))
        for ch in channels:
            if ch.rate == 0:
                continue
            op = ch.operator
            heff = heff - 0.5j * ch.rate * (op.conj().T @ op)
            if np.count_nonzero(op - np.diag(np.diag(op))) == 0:
                d = np.diag(op)
                mask = mask + ch.rate * np.real(np.outer(d, d.conj()))
            else:
                self.jumps.append((ch.rate, op, op.conj().T))
        self.heff = heff
        self.heff_dag = heff.conj().T
        self.mask = mask if np.any(mask) else None

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self.heff @ rho - rho @ self.heff_dag)
        for rate, op, op_dag in self.jumps:
            out += rate * (op @ rho @ op_dag)
        if self.mask is not None:
            out += self.mask * rho
        return out


def invariant_support(rho: np.ndarray, h: np.ndarray,
                      channels: Sequence[CollapseChannel]) -> np.ndarray:
    """Smallest set of basis states holding ``rho`` that the dynamics cannot leave.

    The set is closed under H, every L and every L^dag L, so the master
    equation restricted to it is exact. Loss only lowers photon number and the
    other terms conserve it, so Fock inputs stay in a few low sectors.
    """
    reach = np.abs(h) > 0
    for ch in channels:
        if ch.rate > 0:
            reach |= np.abs(ch.operator) > 0
            reach |= np.abs(ch.operator.conj().T @ ch.operator) > 0
    support = np.any(np.abs(rho) > 0, axis=1)
    while True:
        grown = support | reach[:, support].any(axis=1)
        if np.array_equal(grown, support):
            return np.flatnonzero(support)
        support = grown


def lindblad_evolve(rho: QuantumState, terms, channels: Sequence[CollapseChannel],
                    t: float, dt: float | None = None) -> QuantumState:
    """Fixed-step RK4 integration of the Lindblad master equation."""
    if rho.is_pure:
        raise StateKindError("lindblad_evolve needs a density matrix; call .density() first")
    if t < 0:
        raise ValueError("evolution time must be >= 0")
    if t == 0:
        return rho
    h = total_hamiltonian(terms)
    keep = invariant_support(rho.data, h, channels)
    if keep.size < h.shape[0]:
        sub = rho.data[np.ix_(keep, keep)]
        h = h[np.ix_(keep, keep)]
        channels = [CollapseChannel(c.operator[np.ix_(keep, keep)], c.rate, c.label) for c in channels]
    else:
        sub = rho.data
    if dt is None:
        dt = default_dt(h, channels)
    dt = min(dt, t)
    scale = _operator_scale(h, channels)
    if dt * scale > MAX_STEP_SCALE:
        raise StepTooLarge(f"dt={dt:.3g} us too large for generator scale {scale:.3g} /us")
    rhs = _Liouvillian(h, channels)
    n_steps = max(1, math.ceil(t / dt - 1e-9))
    step = t / n_steps
    r = np.array(sub)
    for _ in range(n_steps):
        k1 = rhs(r)
        k2 = rhs(r + 0.5 * step * k1)
        k3 = rhs(r + 0.5 * step * k2)
        k4 = rhs(r + step * k3)
        r = r + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        r = 0.5 * (r + r.conj().T)
    if keep.size < rho.data.shape[0]:
        full = np.zeros_like(rho.data)
        full[np.ix_(keep, keep)] = r
        r = full
    return rho.replace(r)


def evolve(state: QuantumState, terms, channels: Sequence[CollapseChannel], t: float,
           dt: float | None = None) -> QuantumState:
    """Unitary if there is no active channel, master equation otherwise."""
    active = [c for c in channels if c.rate > 0]
    if not active:
        return propagate_unitary(state, terms, t)
    return lindblad_evolve(state.density(), terms, active, t, dt)


def evolve_envelope(state: QuantumState, coupling: HamiltonianTerm, static: Sequence[HamiltonianTerm],
                    channels: Sequence[CollapseChannel], env: Envelope,
                    per_ramp: int = SEGMENTS_PER_RAMP, dt: float | None = None) -> QuantumState:
    """Evolve under ``amplitude(t) * coupling + static`` with a segmented envelope."""
    for duration, amplitude in env.segments(per_ramp):
        state = evolve(state, [coupling.scaled(amplitude), *static], channels, duration, dt)
    return state
