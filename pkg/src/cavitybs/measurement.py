"""Measurement models.

Imperfections are constant multiplicative contrast factors: the readout scale
for joint photon-number populations and the parity contrast for parity. The
coupler-excitation survival probability is tracked analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .device import DeviceParams
from .errors import AllDiscarded, InvalidDimension, InvalidSpace
from .fock import ModeSpace, QuantumState, parity_op, product_state
from .gates import (BS_THETA, IDEAL, PHYSICAL, SWAP_TEST_PHI, BeamsplitterSpec, GateRecord,
                    beamsplitter, sector_overflow)


@dataclass(frozen=True, eq=False)
class JointNumberDistribution:
    """Joint populations P[n, m] of Alice and Bob.

    ``probs`` are Born-rule values. ``scaled`` folds in the readout scale and,
    unless post-selected, the coupler survival probability.
    """

    probs: np.ndarray
    spam_scale: float = 1.0
    survival: float = 1.0
    postselected: bool = False

    @property
    def spam_applied(self) -> bool:
        return self.spam_scale != 1.0

    @property
    def scaled(self) -> np.ndarray:
        factor = self.spam_scale * (1.0 if self.postselected else self.survival)
        return self.probs * factor

    def __getitem__(self, nm: tuple[int, int]) -> float:
        return float(self.scaled[nm])


@dataclass(frozen=True)
class OverlapEstimate:
    value: float
    ideal_value: float
    contrast: float


def survival_probability(records: Iterable[GateRecord]) -> float:
    return math.prod(1.0 - r.p_exc for r in records)


def joint_number_probs(state: QuantumState, params: DeviceParams, apply_spam: bool = False,
                       records: Iterable[GateRecord] | None = None) -> JointNumberDistribution:
    if state.space.n_modes != 2:
        raise InvalidSpace("joint photon-number readout needs a two-mode state")
    probs = np.clip(state.probabilities().reshape(state.space.dims), 0.0, None)
    probs.flags.writeable = False
    survival = survival_probability(records) if records is not None else 1.0
    return JointNumberDistribution(probs, params.readout_scale if apply_spam else 1.0, survival)


def postselect(dist: JointNumberDistribution,
               records: Iterable[GateRecord]) -> JointNumberDistribution:
    """Condition on the coupler staying in its ground state after every gate."""
    survival = survival_probability(records)
    if survival <= 0:
        raise AllDiscarded("post-selection discards every shot")
    return replace(dist, survival=survival, postselected=True)


def selective_pulse_freq(n: int, m: int, params: DeviceParams) -> float:
    return params.omega_ge - n * params.chi_ac - m * params.chi_bc


def parity_expectation(state: QuantumState, mode: int, params: DeviceParams,
                       apply_contrast: bool = False) -> float:
    p = state.mode_probabilities(mode)
    value = float(np.dot(p, parity_op(len(p)).diagonal().real))
    return value * params.parity_contrast if apply_contrast else value


def mean_photon_number(state: QuantumState, mode: int) -> float:
    p = state.mode_probabilities(mode)
    return float(np.dot(p, np.arange(len(p))))


def state_overlap(rho_a: QuantumState, rho_b: QuantumState) -> float:
    """Tr(rho_a rho_b) for single-mode states."""
    a, b = rho_a.density().data, rho_b.density().data
    return float(np.real(np.sum(a * b.T)))


def _pad(state: QuantumState, dim: int) -> QuantumState:
    d = state.space.dims[0]
    if state.is_pure:
        v = np.zeros(dim, complex)
        v[:d] = state.data
        return QuantumState(ModeSpace((dim,)), v, "pure", state.leakage)
    m = np.zeros((dim, dim), complex)
    m[:d, :d] = state.data
    return QuantumState(ModeSpace((dim,)), m, "density", state.leakage)


def overlap_via_parity(rho_a: QuantumState, rho_b: QuantumState, params: DeviceParams,
                       mode: str = IDEAL, pad: bool = True) -> OverlapEstimate:
    """Estimate Tr(rho_a rho_b) from Alice's parity after a 50:50 splitter.

    The splitter is exact on every photon-number sector that fits inside the
    truncation. With ``pad`` the inputs are moved into a larger space whenever
    their own dimension would cut into an occupied sector; without it the
    sector guard raises instead.
    """
    if rho_a.space.n_modes != 1 or rho_b.space.n_modes != 1:
        raise InvalidSpace("overlap inputs must be single-mode states")
    if rho_a.space.dims != rho_b.space.dims:
        raise InvalidDimension(
            f"overlap inputs have different dimensions {rho_a.space.dims} and {rho_b.space.dims}")
    dim = rho_a.space.dims[0]
    ideal_value = state_overlap(rho_a, rho_b)
    joint = product_state(rho_a, rho_b)
    if pad and sector_overflow(joint) > 1e-12:
        # one level above the largest reachable occupation keeps the top level empty
        big = 2 * dim
        joint = product_state(_pad(rho_a, big), _pad(rho_b, big))
    spec = BeamsplitterSpec(theta=BS_THETA, phi=SWAP_TEST_PHI, mode=mode)
    out, _ = beamsplitter(joint, spec, params)
    contrast = params.parity_contrast if mode == PHYSICAL else 1.0
    value = parity_expectation(out, 0, params) * contrast
    return OverlapEstimate(value, ideal_value, contrast)
