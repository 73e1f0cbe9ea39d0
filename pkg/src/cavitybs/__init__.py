"""Simulation and analysis of a frequency-converting beamsplitter between two cavity modes."""

from .device import DeviceParams, bs_duration, load_config, parse_config
from .errors import CavityError
from .fitting import (analyze_single_excitation, bs_decoherence_time, bs_infidelity,
                      fit_decaying_sinusoid, fit_exponential, hom_contrast)
from .fock import ModeSpace, QuantumState, coherent_state, fock_state, product_state
from .gates import (BS_THETA, IDEAL, PHYSICAL, SWAP_TEST_PHI, BeamsplitterSpec, beamsplitter,
                    displace, dps, prepare_21, wait)
from .measurement import joint_number_probs, overlap_via_parity, parity_expectation
from .program import Dataset, execute, format_program, parse, sweep_dataset

__all__ = [
    "BS_THETA", "IDEAL", "PHYSICAL", "SWAP_TEST_PHI",
    "BeamsplitterSpec", "CavityError", "Dataset", "DeviceParams", "ModeSpace", "QuantumState",
    "analyze_single_excitation", "beamsplitter", "bs_decoherence_time", "bs_duration",
    "bs_infidelity", "coherent_state", "displace", "dps", "execute", "fit_decaying_sinusoid",
    "fit_exponential", "fock_state", "format_program", "hom_contrast", "joint_number_probs",
    "load_config", "overlap_via_parity", "parity_expectation", "parse", "parse_config",
    "prepare_21", "product_state", "sweep_dataset", "wait",
]
