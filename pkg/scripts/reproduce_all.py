"""Run every experiment command with the packaged calibration and summarize.

    python3 scripts/reproduce_all.py --out results --mode physical

Each command writes its CSV/JSON outputs and a manifest into its own
subdirectory of ``--out``; the summary lists wall time and headline numbers.
"""

import argparse
import json
import time
from pathlib import Path

from cavitybs.cli import main
from cavitybs.program import Dataset

COMMANDS = {
    "rabi": [],
    "hom": [],
    "mz": [],
    "multiphoton": [],
    "overlap": [],
    "calibrate": ["--xi-max", "0.12", "--xi-steps", "13"],
    "swap_test": ["run", "swap_test"],
}


def headline(name: str, out: Path) -> str:
    if name == "rabi":
        r = json.loads((out / "rabi_fit.json").read_text())
        return f"g={r['g']:.6f} MHz tau_1={r['tau_1']} tau_phi={r['tau_phi']} tau_bs={r['tau_bs']}"
    if name == "hom":
        r = json.loads((out / "hom_contrast.json").read_text())
        return f"contrast={r['baseline_relative']:.4f} visibility={r['visibility']:.4f}"
    if name == "mz":
        d = Dataset.from_csv(out / "mz.csv").as_dict()
        ends = [d["P11"][d["stage"] == s][-1] for s in (1, 2, 3, 4)]
        return "P11 after each splitter " + ", ".join(f"{p:.4f}" for p in ends)
    if name == "multiphoton":
        split = Dataset.from_csv(out / "coherent_split.csv").rows
        return f"nbar after 1 BS ({split[1, 1]:.4f}, {split[1, 2]:.4f}); after 2 ({split[2, 1]:.4f}, {split[2, 2]:.4f})"
    if name == "overlap":
        d = Dataset.from_csv(out / "overlap.csv").as_dict()
        dev = abs(d["parity_raw"] - d["analytic"]).max()
        return f"max |parity - analytic| = {dev:.1e}; scaled at alpha=0: {d['parity_scaled'][0]:.4f}"
    if name == "swap_test":
        d = Dataset.from_csv(out / "swap_test.csv").as_dict()
        return f"overlap from {d['overlap'].max():.4f} down to {d['overlap'].min():.4f}"
    if name == "calibrate":
        d = Dataset.from_csv(out / "calibrate.csv").as_dict()
        return f"g at max drive {d['g'][-1] * 1e3:.1f} kHz; infidelity {d['infidelity'][1]:.4f} .. {d['infidelity'][-1]:.4f}"
    return ""


def cli():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--mode", choices=("ideal", "physical"), default="physical")
    ap.add_argument("--dims", help="override truncation, e.g. 8,8")
    ap.add_argument("--only", nargs="+", choices=sorted(COMMANDS))
    args = ap.parse_args()

    failed = []
    for name, extra in COMMANDS.items():
        if args.only and name not in args.only:
            continue
        out = Path(args.out) / name
        if extra[:1] == ["run"]:
            # shipped programs carry their own mode and truncation
            argv = [*extra, "--out", str(out)]
        else:
            argv = [name, *extra, "--out", str(out), "--mode", args.mode]
            if args.dims:
                argv += ["--dims", args.dims]
        start = time.perf_counter()
        code = main(argv)
        elapsed = time.perf_counter() - start
        if code != 0:
            failed.append(name)
            print(f"[{name}] exit {code} after {elapsed:.1f}s")
            continue
        print(f"[{name}] {elapsed:.1f}s  {headline(name, out)}")
    if failed:
        raise SystemExit(f"failed: {', '.join(failed)}")


if __name__ == "__main__":
    cli()
