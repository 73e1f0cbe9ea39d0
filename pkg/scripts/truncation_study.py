"""Check that physical-mode results are converged in Fock truncation and time step.

    python3 scripts/truncation_study.py

Prints the HOM contrast and the P11 revival after a full swap for several
truncations, then the same P11 at the default step against a finer step.
"""

import argparse
import time

import numpy as np

from cavitybs.device import load_config
from cavitybs.evolution import bilinear_hamiltonian, lindblad_evolve
from cavitybs.fitting import hom_contrast
from cavitybs.fock import ModeSpace, fock_state
from cavitybs.gates import PHYSICAL, SWAP_THETA, BeamsplitterSpec, beamsplitter, cavity_channels, kerr_term
from cavitybs.program import parse, sweep_dataset


def hom_at(dims, params, steps):
    prog = parse(f"dims {dims} {dims}\nmode physical\nsweep t from 0 to 11.5 steps {steps}\n"
                 "prep fock 1 1\nbs t=$t\nmeasure joint postselect=on")
    data = sweep_dataset(prog, params)
    return hom_contrast(data.as_dict())


def swap_revival(dims, params):
    state = fock_state(ModeSpace((dims, dims)), (1, 1))
    out, _ = beamsplitter(state, BeamsplitterSpec(theta=SWAP_THETA, mode=PHYSICAL), params)
    return float(out.probabilities()[out.space.flatten((1, 1))])


def step_refinement(params, t=7.35):
    space = ModeSpace((4, 4))
    rho = fock_state(space, (1, 1)).density()
    h = [bilinear_hamiltonian(space, params.g, 0.0), kerr_term(space, params, True)]
    channels = cavity_channels(space, params, True)
    coarse = lindblad_evolve(rho, h, channels, t)
    fine = lindblad_evolve(rho, h, channels, t, dt=0.01)
    return float(np.max(np.abs(coarse.data - fine.data)))


def cli():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[4, 5, 6, 8])
    ap.add_argument("--steps", type=int, default=47, help="HOM sweep points")
    args = ap.parse_args()
    params = load_config()

    print(f"{'dims':>5} {'contrast':>10} {'P11(swap)':>12} {'seconds':>8}")
    for d in args.dims:
        start = time.perf_counter()
        c = hom_at(d, params, args.steps)
        r = swap_revival(d, params)
        print(f"{d:>5} {c:>10.6f} {r:>12.8f} {time.perf_counter() - start:>8.1f}")
    print(f"max |rho(default dt) - rho(dt=0.01)| after a swap: {step_refinement(params):.2e}")


if __name__ == "__main__":
    cli()
