"""Command-line front end.

Every command writes plot-ready CSV (plus JSON fit reports where relevant)
and a run manifest to ``--out``. Exit codes: 0 success, 2 usage error,
3 config error, 4 numerical guard tripped.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from .device import (DeviceParams, bs_duration, coupling_correction, coupling_strength,
                     drive_detunings, excitation_probability, load_config, stark_shift, xi_split)
from .errors import NUMERICAL_GUARDS, CavityError, ConfigError, FitDegenerate, InvalidDataset
from .fitting import (analyze_single_excitation, fit_decaying_sinusoid, fit_exponential,
                      hom_contrast_report)
from .fock import ModeSpace, coherent_amplitudes, coherent_state, fock_state
from .gates import IDEAL, MODES, PHYSICAL, BeamsplitterSpec, beamsplitter, dps, prepare_21
from .measurement import joint_number_probs, overlap_via_parity, postselect
from .program import Dataset, execute, parse, parse_file, sweep_dataset

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config_path: str | None
    program_path: str | None
    outputs: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    shots: int | None = None
    versions: dict[str, str] = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8", newline="\n")

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        try:
            return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError, TypeError) as exc:
            raise InvalidDataset(f"cannot read manifest {path}: {exc}") from None


def _versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "cavitybs": pkg}


class Run:
    """Shared state of one command invocation: parameters, RNG and written files."""

    def __init__(self, args: argparse.Namespace, argv: list[str]):
        self.args = args
        self.argv = argv
        self.params: DeviceParams = load_config(args.config)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.rng = np.random.default_rng(args.seed)
        self.outputs: dict[str, str] = {}
        self.program_path: str | None = None

    @property
    def mode(self) -> str:
        return self.args.mode or PHYSICAL

    def dims(self, default: tuple[int, int]) -> tuple[int, int]:
        return tuple(self.args.dims) if self.args.dims else default

    def write_csv(self, name: str, ds: Dataset) -> Path:
        path = self.out / name
        text = ds.to_csv(path)
        self.outputs[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        print(f"wrote {path} ({len(ds)} rows)")
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8", newline="\n")
        print(f"wrote {path}")
        return path

    def sample(self, probs: np.ndarray) -> np.ndarray:
        """Replace exact probabilities by seeded shot frequencies if ``--shots`` is set."""
        shots = self.args.shots
        if not shots:
            return probs
        p = np.clip(np.asarray(probs, float), 0, None)
        rest = max(0.0, 1.0 - p.sum())
        counts = self.rng.multinomial(shots, np.append(p, rest) / (p.sum() + rest))
        return counts[:-1] / shots

    def sample_expectation(self, value: float) -> float:
        shots = self.args.shots
        if not shots:
            return value
        return 2.0 * self.rng.binomial(shots, min(max((1 + value) / 2, 0.0), 1.0)) / shots - 1.0

    def finish(self) -> None:
        manifest = RunManifest(self.args.command, self.argv, self.args.config,
                               self.program_path, self.outputs, self.args.seed,
                               self.args.shots, _versions())
        path = self.out / f"{self.args.command}.manifest.json"
        manifest.write(path)
        print(f"wrote {path}")


def _joint_row(state, params, records, postselected: bool) -> np.ndarray:
    dist = joint_number_probs(state, params, records=records)
    if postselected:
        dist = postselect(dist, records)
    return dist.scaled


# --- experiment commands ---------------------------------------------------

def _single_photon_sweep(run: Run, occupations, times, dims) -> np.ndarray:
    """Rows of (P10, P01) for one photon starting in the given mode."""
    space = ModeSpace(dims)
    rows = []
    for t in times:
        state, rec = beamsplitter(fock_state(space, occupations),
                                  BeamsplitterSpec(theta=None, duration=float(t), mode=run.mode),
                                  run.params)
        p = run.sample(_joint_row(state, run.params, [rec], True).ravel())
        p = p.reshape(dims)
        rows.append((p[1, 0], p[0, 1]))
    return np.array(rows)


def cmd_rabi(run: Run) -> int:
    a = run.args
    params = run.params if a.g is None else run.params.replace(g=a.g)
    run.params = params
    times = np.linspace(0, a.t_max, a.steps) if a.steps > 1 else np.array([0.0])
    pops = _single_photon_sweep(run, (1, 0), times, run.dims((3, 3)))
    ds = Dataset(["t", "P10", "P01", "P10+P01"],
                 np.column_stack([times, pops, pops.sum(axis=1)]))
    run.write_csv("rabi.csv", ds)
    try:
        report = analyze_single_excitation(times, pops[:, 0], pops[:, 1]).to_dict()
    except (InvalidDataset, FitDegenerate) as exc:
        # too little data to fit; the sweep itself is still written
        print(f"fit skipped: {exc}", file=sys.stderr)
        report = {"error": str(exc)}
    run.write_json("rabi_fit.json", report)
    if "tau_bs" in report:
        print(f"g = {report['g']:.6g} MHz, tau_bs = {report['tau_bs']} us, "
              f"infidelity = {report['infidelity']:.4g}")
    return EXIT_OK


def cmd_hom(run: Run) -> int:
    a = run.args
    t_bs = bs_duration(run.params.g)
    t_max = a.t_max if a.t_max is not None else 3 * t_bs
    times = np.linspace(0, t_max, a.steps)
    dims = run.dims((6, 6))
    if a.distinguishable:
        # independent photons: classical mixing of single-photon probabilities
        pa = _single_photon_sweep(run, (1, 0), times, dims)
        pb = _single_photon_sweep(run, (0, 1), times, dims)
        p11 = pa[:, 0] * pb[:, 1] + pa[:, 1] * pb[:, 0]
        p20 = pa[:, 0] * pb[:, 0]
        p02 = pa[:, 1] * pb[:, 1]
    else:
        space = ModeSpace(dims)
        rows = []
        for t in times:
            state, rec = beamsplitter(fock_state(space, (1, 1)),
                                      BeamsplitterSpec(theta=None, duration=float(t), mode=run.mode),
                                      run.params)
            p = run.sample(_joint_row(state, run.params, [rec], True).ravel()).reshape(dims)
            rows.append((p[1, 1], p[2, 0], p[0, 2]))
        p11, p20, p02 = np.array(rows).T
    ds = Dataset(["t", "P11", "P20", "P02", "P20+P02"],
                 np.column_stack([times, p11, p20, p02, p20 + p02]))
    run.write_csv("hom.csv", ds)
    report = hom_contrast_report(ds.as_dict())
    report["t_bs"] = t_bs
    run.write_json("hom_contrast.json", report)
    print(f"contrast = {report['baseline_relative']:.6f}")
    return EXIT_OK


def cmd_overlap(run: Run) -> int:
    a = run.args
    alphas = np.linspace(0, a.alpha_max, a.n_alpha)
    phases = np.linspace(0, 2 * math.pi, a.n_phi)
    contrast = run.params.parity_contrast
    rows = []
    for alpha in alphas:
        rho_a = coherent_state(a.dim, alpha)
        for dphi in phases:
            rho_b = coherent_state(a.dim, alpha * np.exp(1j * dphi))
            est = overlap_via_parity(rho_a, rho_b, run.params, IDEAL)
            raw = run.sample_expectation(est.value)
            analytic = math.exp(-2 * alpha ** 2 * (1 - math.cos(dphi)))
            rows.append((alpha, dphi, raw, raw * contrast, est.ideal_value, analytic))
    ds = Dataset(["alpha", "dphi", "parity_raw", "parity_scaled", "ideal", "analytic"], rows)
    run.write_csv("overlap.csv", ds)
    return EXIT_OK


def _mz_stages(with_dps: bool) -> list[str]:
    stages = ["bs", "dps", "bs", "bs", "dps", "bs"]
    return stages if with_dps else [s for s in stages if s != "dps"]


def cmd_mz(run: Run) -> int:
    a = run.args
    params, mode = run.params, run.mode
    dims = run.dims((6, 6))
    t_bs = bs_duration(params.g)
    # a physical 50:50 pulse with ramps lasts one ring time longer than its area
    t_stage = t_bs + (params.ring_time if mode == PHYSICAL else 0.0)
    state = fock_state(ModeSpace(dims), (1, 1))
    records = []
    clock = 0.0
    rows = []
    stage = 0
    for step in _mz_stages(not a.no_dps):
        if step == "dps":
            state, rec = dps(state, math.pi / 2, params, mode)
            records.append(rec)
            clock += rec.duration
            continue
        stage += 1
        for t in np.linspace(0, t_stage, a.steps_per_bs):
            out, rec = beamsplitter(state, BeamsplitterSpec(theta=None, duration=float(t), mode=mode),
                                    params)
            p = run.sample(_joint_row(out, params, records + [rec], True).ravel()).reshape(dims)
            rows.append((clock + t, stage, t, p[1, 1], p[2, 0], p[0, 2]))
        state, rec = beamsplitter(state, BeamsplitterSpec(theta=None, duration=t_stage, mode=mode),
                                  params)
        records.append(rec)
        clock += t_stage
    run.write_csv("mz.csv", Dataset(["time", "stage", "t", "P11", "P20", "P02"], rows))
    return EXIT_OK


def _coherent_dim(alpha: float, tolerance: float = 1e-8) -> int:
    for dim in range(4, 400):
        if coherent_amplitudes(dim, alpha)[1] <= tolerance:
            return dim
    raise CavityError(f"no truncation below 400 holds alpha={alpha}")


def cmd_multiphoton(run: Run) -> int:
    a = run.args
    params, mode = run.params, run.mode
    dims = run.dims((5, 5))
    state0, prep = prepare_21(params, mode, dims)
    t_bs = bs_duration(params.g)
    times = np.linspace(0, 2 * t_bs, a.steps)
    rows = []
    for t in times:
        out, rec = beamsplitter(state0, BeamsplitterSpec(theta=None, duration=float(t), mode=mode),
                                params)
        p = run.sample(_joint_row(out, params, [prep, rec], True).ravel()).reshape(dims)
        theta = 2 * math.pi * params.g * (t - min(params.ring_time, t / 2) if mode == PHYSICAL else t)
        rows.append((t, theta, p[3, 0], p[2, 1], p[1, 2], p[0, 3]))
    run.write_csv("multiphoton.csv", Dataset(["t", "theta", "P30", "P21", "P12", "P03"], rows))

    dim = _coherent_dim(a.alpha)
    text = (f"dims {dim} {dim}\nmode {mode}\nprep coherent {a.alpha!r} 0\n"
            "bs theta=0.25pi; measure nbar label=bs1\nbs theta=0.25pi; measure nbar label=bs2\n")
    values = execute(parse(text), params).values()
    split = [(0, abs(a.alpha) ** 2, 0.0),
             (1, values["bs1_nbar_a"], values["bs1_nbar_b"]),
             (2, values["bs2_nbar_a"], values["bs2_nbar_b"])]
    run.write_csv("coherent_split.csv", Dataset(["stage", "nbar_a", "nbar_b"], split))
    return EXIT_OK


CALIBRATE_COLUMNS = ["xi_product", "xi1", "xi2", "g", "g_corrected", "p_exc", "t_bs", "tau_1",
                     "tau_phi", "tau_bs", "infidelity", "stark_1", "stark_2"]


def calibration_row(x: float, params: DeviceParams) -> list[float]:
    """Coupling, timing and error budget at drive-amplitude product ``x``.

    The coupler excitation probability also sets the fraction of the coupler's
    decay and dephasing that the cavities inherit while the drives are on.
    """
    if x == 0:
        return [0.0] * len(CALIBRATE_COLUMNS)
    xi1, xi2 = xi_split(x, params)
    d1, d2, da, db = drive_detunings(params)
    g = coupling_strength(params, xi1, xi2)
    g_corr = coupling_correction(g, params, d1, d2, da, db)
    p = excitation_probability(x, params)
    coupler_dephasing = max(1.0 / params.t2_c - 1.0 / (2 * params.t1_c), 0.0)
    tau_1 = 1.0 / (1.0 / params.tau_1 + p / params.t1_c)
    tau_phi = 1.0 / (1.0 / params.tau_phi + p * coupler_dephasing)
    tau_bs = 1.0 / (1.0 / (2 * tau_1) + 1.0 / tau_phi)
    t_bs = bs_duration(g_corr)
    return [x, xi1, xi2, g, g_corr, p, t_bs, tau_1, tau_phi, tau_bs, t_bs / tau_bs,
            stark_shift(xi1, params, d1), stark_shift(xi2, params, d2)]


def cmd_calibrate(run: Run) -> int:
    a = run.args
    grid = a.xi if a.xi else list(np.linspace(0, a.xi_max, a.xi_steps))
    rows = [calibration_row(float(x), run.params) for x in grid]
    run.write_csv("calibrate.csv", Dataset(CALIBRATE_COLUMNS, rows))
    return EXIT_OK


def _shipped(name: str) -> str:
    return resources.files("cavitybs.programs").joinpath(f"{name}.prog").read_text(encoding="utf-8")


def cmd_run(run: Run) -> int:
    a = run.args
    path = Path(a.program)
    if path.exists():
        program = parse_file(path)
        run.program_path = str(path)
    else:
        try:
            program = parse(_shipped(a.program))
        except FileNotFoundError:
            raise CavityError(f"no program file or shipped program named {a.program!r}") from None
        run.program_path = f"shipped:{a.program}"
    program = program.with_overrides(dims=a.dims, mode=a.mode)
    params = load_config(program.config) if program.config and not a.config else run.params
    name = Path(a.program).stem
    if program.sweep is not None:
        ds = sweep_dataset(program, params)
    else:
        values = execute(program, params).values()
        ds = Dataset(list(values), [list(values.values())])
    run.write_csv(f"{name}.csv", ds)
    return EXIT_OK


def cmd_fit(run: Run) -> int:
    a = run.args
    try:
        ds = Dataset.from_csv(a.csv)
    except (OSError, ValueError) as exc:
        raise InvalidDataset(f"cannot read {a.csv}: {exc}") from None
    for col in (a.x, *a.y):
        if col not in ds.columns:
            raise InvalidDataset(f"column {col!r} not in {a.csv}")
    t = ds.column(a.x)
    if a.model == "sinusoid":
        report = fit_decaying_sinusoid(t, ds.column(a.y[0])).to_dict()
    elif a.model == "exponential":
        report = fit_exponential(t, ds.column(a.y[0])).to_dict()
    elif a.model == "rabi":
        if len(a.y) != 2:
            raise InvalidDataset("rabi model needs --y P10 P01")
        report = analyze_single_excitation(t, ds.column(a.y[0]), ds.column(a.y[1])).to_dict()
    else:
        report = hom_contrast_report(ds.as_dict(), a.x, a.y[0])
    name = f"{Path(a.csv).stem}_{a.model}_fit.json"
    run.write_json(name, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

def _dims(text: str) -> tuple[int, int]:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A,B, got {text!r}") from None
    if len(dims) != 2 or min(dims) < 2:
        raise argparse.ArgumentTypeError("dims must be two integers >= 2")
    return dims


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="device config file (default: packaged calibration)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--mode", choices=MODES, help="gate fidelity mode (default physical)")
    common.add_argument("--dims", type=_dims, help="Fock truncation per mode, e.g. 6,6")
    common.add_argument("--shots", type=_positive_int, help="sample this many shots per point")
    common.add_argument("--seed", type=int, default=0, help="seed for shot sampling")

    parser = argparse.ArgumentParser(prog="cavitybs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rabi", parents=[common], help="single-photon exchange sweep and fit")
    p.add_argument("--g", type=float, help="override the coupling (MHz)")
    p.add_argument("--t-max", type=float, default=30.0)
    p.add_argument("--steps", type=_positive_int, default=121)
    p.set_defaults(func=cmd_rabi)

    p = sub.add_parser("hom", parents=[common], help="two-photon interference sweep")
    p.add_argument("--t-max", type=float, help="default: three 50:50 durations")
    p.add_argument("--steps", type=_positive_int, default=93)
    p.add_argument("--distinguishable", action="store_true",
                   help="classical mixing of independent photons")
    p.set_defaults(func=cmd_hom)

    p = sub.add_parser("overlap", parents=[common], help="coherent-state swap test grid")
    p.add_argument("--alpha-max", type=float, default=math.sqrt(3))
    p.add_argument("--n-alpha", type=_positive_int, default=7)
    p.add_argument("--n-phi", type=_positive_int, default=13)
    p.add_argument("--dim", type=int, default=30, help="single-mode truncation")
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("mz", parents=[common], help="cascaded Mach-Zehnder sequence")
    p.add_argument("--steps-per-bs", type=_positive_int, default=21)
    p.add_argument("--no-dps", action="store_true", help="drop both phase shifters")
    p.set_defaults(func=cmd_mz)

    p = sub.add_parser("multiphoton", parents=[common], help="|2,1> sweep and coherent split")
    p.add_argument("--steps", type=_positive_int, default=41)
    p.add_argument("--alpha", type=float, default=math.sqrt(2))
    p.set_defaults(func=cmd_multiphoton)

    p = sub.add_parser("calibrate", parents=[common], help="coupling and error budget vs drive")
    p.add_argument("--xi", type=float, nargs="+", help="explicit |xi1||xi2| values")
    p.add_argument("--xi-max", type=float, default=0.12)
    p.add_argument("--xi-steps", type=_positive_int, default=7)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", parents=[common], help="execute a program file")
    p.add_argument("program", help="path, or the name of a shipped program (hom, rabi, ...)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fit", parents=[common], help="fit a CSV column")
    p.add_argument("csv")
    p.add_argument("--model", choices=("sinusoid", "exponential", "rabi", "hom"), default="sinusoid")
    p.add_argument("--x", default="t")
    p.add_argument("--y", nargs="+", default=["P10"])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("replay", help="re-run a manifest and compare its CSV hashes")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for the replayed outputs")
    p.set_defaults(func=None)
    return parser


def _replay(args: argparse.Namespace) -> int:
    manifest = RunManifest.read(Path(args.manifest))
    argv = list(manifest.argv)
    out = args.out or str(Path(args.manifest).parent / "replay")
    # drop the recorded output directory and use the replay target instead
    cleaned, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        cleaned.append(tok)
    code = main(cleaned + ["--out", out])
    if code != EXIT_OK:
        return code
    replayed = RunManifest.read(Path(out) / f"{manifest.command}.manifest.json")
    mismatched = [k for k, v in manifest.outputs.items() if replayed.outputs.get(k) != v]
    if mismatched:
        print(f"replay differs in: {', '.join(mismatched)}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"replay identical: {', '.join(sorted(manifest.outputs))}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            return _replay(args)
        run = Run(args, argv)
        code = args.func(run)
        run.finish()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_GUARDS as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CavityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
