"""A line-oriented language for interferometer programs.

Example::

    dims 6 6
    mode physical
    sweep t from 0 to 12 steps 97
    prep fock 1 1
    bs t=$t
    measure joint postselect=on

Statements are separated by newlines or ``;``; ``#`` starts a comment.
Angles accept ``pi`` literals (``0.25pi``, ``pi/2``). Complex amplitudes are
written ``1.2``, ``(1+0.5j)`` or in polar form ``1.2@0.5pi``.
"""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .device import DeviceParams, load_config
from .errors import (BadArgument, CavityError, DuplicateSweep, EmptyGrid, OutOfTruncation,
                     UnknownInstruction, UnresolvedPlaceholder)
from .fock import ModeSpace, QuantumState, coherent_state, fock_state, product_state
from .gates import (BS_THETA, IDEAL, MODES, PHYSICAL, SWAP_TEST_PHI, BeamsplitterSpec,
                    GateRecord, beamsplitter, displace, dps, idle, prepare_21, wait)
from .measurement import (joint_number_probs, mean_photon_number, parity_expectation,
                          postselect)

DEFAULT_DIMS = (6, 6)
PARAM_KEYS = frozenset(f.name for f in fields(DeviceParams))


@dataclass(frozen=True)
class Placeholder:
    name: str

    def __str__(self) -> str:
        return f"${self.name}"


@dataclass(frozen=True)
class Instruction:
    """One program step. ``args`` is a tuple of ``(key, value)`` pairs in canonical order."""

    op: str
    args: tuple[tuple[str, Any], ...]
    line: int | None = field(default=None, compare=False)
    column: int | None = field(default=None, compare=False)

    def get(self, key: str, default=None):
        for k, v in self.args:
            if k == key:
                return v
        return default

    def placeholders(self) -> set[str]:
        return {v.name for _, v in self.args if isinstance(v, Placeholder)}


@dataclass(frozen=True)
class Sweep:
    name: str
    start: float
    stop: float
    steps: int

    def grid(self) -> np.ndarray:
        if self.steps < 1:
            raise EmptyGrid(f"sweep {self.name} has {self.steps} steps")
        if self.steps == 1:
            return np.array([self.start])
        return np.linspace(self.start, self.stop, self.steps)


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...]
    dims: tuple[int, int] = DEFAULT_DIMS
    config: str | None = None
    mode: str = IDEAL
    sweep: Sweep | None = None

    def bind(self, value: float) -> "Program":
        """Substitute the sweep placeholder and re-validate every argument."""
        if self.sweep is None:
            raise UnresolvedPlaceholder("program has no sweep to bind")
        name = self.sweep.name
        out = []
        for ins in self.instructions:
            if name not in ins.placeholders():
                out.append(ins)
                continue
            args = tuple((k, float(value) if isinstance(v, Placeholder) else v) for k, v in ins.args)
            bound = replace(ins, args=args)
            _validate(bound)
            out.append(bound)
        return replace(self, instructions=tuple(out), sweep=None)

    def with_overrides(self, dims: tuple[int, int] | None = None,
                       mode: str | None = None) -> "Program":
        return replace(self, dims=tuple(dims) if dims else self.dims, mode=mode or self.mode)


# --- lexical layer ---------------------------------------------------------

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_REAL_RE = re.compile(rf"^(?P<num>{_NUM})?(?P<pi>pi)?(?:/(?P<den>{_NUM}))?$")


def _real(text: str) -> float:
    if text.startswith("-") and text[1:].startswith("pi"):
        return -_real(text[1:])
    m = _REAL_RE.match(text)
    if not m or not (m.group("num") or m.group("pi")):
        raise ValueError(text)
    value = float(m.group("num")) if m.group("num") else 1.0
    if m.group("pi"):
        value *= math.pi
    if m.group("den"):
        den = float(m.group("den"))
        if den == 0:
            raise ValueError(text)
        value /= den
    return value


def _complex(text: str) -> complex:
    if "@" in text:
        r, _, ang = text.partition("@")
        return _real(r) * complex(math.cos(_real(ang)), math.sin(_real(ang)))
    try:
        return complex(_real(text))
    except ValueError:
        return complex(text)


@dataclass
class _Token:
    text: str
    column: int


def _statements(text: str) -> Iterator[tuple[int, list[_Token]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        offset = 0
        for chunk in body.split(";"):
            tokens = [_Token(m.group(), offset + m.start() + 1) for m in re.finditer(r"\S+", chunk)]
            if tokens:
                yield lineno, tokens
            offset += len(chunk) + 1


# --- grammar ---------------------------------------------------------------

_ALIASES = {"prepare": "prep", "state-21": "state21"}
_ON_OFF = {"on": True, "off": False}


def _kv(tokens: Sequence[_Token], line: int, allowed: dict[str, str]) -> dict[str, tuple[Any, int]]:
    """Parse ``key=value`` tokens; ``allowed`` maps key -> value kind."""
    out: dict[str, tuple[Any, int]] = {}
    for tok in tokens:
        key, eq, raw = tok.text.partition("=")
        if not eq or not raw:
            raise BadArgument(f"expected key=value, got {tok.text!r}", line=line, column=tok.column)
        if key not in allowed:
            raise BadArgument(f"unknown argument {key!r}", line=line, column=tok.column)
        if key in out:
            raise BadArgument(f"argument {key!r} given twice", line=line, column=tok.column)
        out[key] = (_value(raw, allowed[key], key, line, tok.column), tok.column)
    return out


def _value(raw: str, kind: str, key: str, line: int, column: int):
    if raw.startswith("$"):
        if kind not in ("real", "complex") or not re.fullmatch(r"\$[A-Za-z_]\w*", raw):
            raise BadArgument(f"{key} cannot take placeholder {raw!r}", line=line, column=column)
        return Placeholder(raw[1:])
    try:
        if kind == "real":
            return _real(raw)
        if kind == "complex":
            return _complex(raw)
    except ValueError:
        raise BadArgument(f"{key}: not a number: {raw!r}", line=line, column=column) from None
    if kind == "switch":
        if raw not in _ON_OFF:
            raise BadArgument(f"{key} must be on or off, got {raw!r}", line=line, column=column)
        return _ON_OFF[raw]
    if kind == "fidelity":
        if raw not in MODES:
            raise BadArgument(f"mode must be ideal or physical, got {raw!r}", line=line, column=column)
        return raw
    if kind == "cavity":
        if raw not in ("a", "b"):
            raise BadArgument(f"mode must be a or b, got {raw!r}", line=line, column=column)
        return raw
    if kind == "label":
        if not re.fullmatch(r"[A-Za-z_]\w*", raw):
            raise BadArgument(f"label must be an identifier, got {raw!r}", line=line, column=column)
        return raw
    raise AssertionError(kind)


def _positional_int(tok: _Token, line: int, what: str) -> int:
    try:
        value = int(tok.text)
    except ValueError:
        raise BadArgument(f"{what} must be an integer, got {tok.text!r}",
                          line=line, column=tok.column) from None
    return value


def _parse_instruction(op: str, rest: list[_Token], line: int, column: int) -> Instruction:
    def make(args):
        ins = Instruction(op, tuple(args), line, column)
        _validate(ins)
        return ins

    if op == "prep":
        if not rest:
            raise BadArgument("prep needs a state kind", line=line, column=column)
        kind = _ALIASES.get(rest[0].text, rest[0].text)
        if kind == "fock":
            if len(rest) != 3:
                raise BadArgument("prep fock takes two occupations", line=line, column=rest[0].column)
            n, m = (_positional_int(t, line, "occupation") for t in rest[1:])
            return make([("kind", "fock"), ("n", n), ("m", m)])
        if kind == "coherent":
            if len(rest) != 3:
                raise BadArgument("prep coherent takes two amplitudes", line=line, column=rest[0].column)
            a, b = (_value(t.text, "complex", "alpha", line, t.column) for t in rest[1:])
            return make([("kind", "coherent"), ("alpha_a", a), ("alpha_b", b)])
        if kind == "state21":
            if len(rest) != 1:
                raise BadArgument("prep state21 takes no arguments", line=line, column=rest[1].column)
            return make([("kind", "state21")])
        raise BadArgument(f"unknown state kind {rest[0].text!r}", line=line, column=rest[0].column)

    if op == "bs":
        kv = _kv(rest, line, {"theta": "real", "t": "real", "phi": "real", "mode": "fidelity"})
        if "theta" in kv and "t" in kv:
            raise BadArgument("bs takes theta= or t=, not both", line=line, column=kv["t"][1])
        args = [("theta", kv["theta"][0])] if "theta" in kv else \
            [("t", kv["t"][0])] if "t" in kv else [("theta", BS_THETA)]
        args.append(("phi", kv.get("phi", (0.0, 0))[0]))
        if "mode" in kv:
            args.append(("mode", kv["mode"][0]))
        return make(args)

    if op == "dps":
        kv = _kv(rest, line, {"phi": "real", "mode": "fidelity"})
        if "phi" not in kv:
            raise BadArgument("dps needs phi=", line=line, column=column)
        args = [("phi", kv["phi"][0])]
        if "mode" in kv:
            args.append(("mode", kv["mode"][0]))
        return make(args)

    if op == "displace":
        kv = _kv(rest, line, {"mode": "cavity", "alpha": "complex"})
        if "alpha" not in kv:
            raise BadArgument("displace needs alpha=", line=line, column=column)
        return make([("mode", kv.get("mode", ("a", 0))[0]), ("alpha", kv["alpha"][0])])

    if op == "wait":
        kv = _kv(rest, line, {"t": "real"})
        if "t" not in kv:
            raise BadArgument("wait needs t=", line=line, column=column)
        return make([("t", kv["t"][0])])

    if op == "measure":
        if not rest:
            raise BadArgument("measure needs a kind", line=line, column=column)
        kind, args = rest[0].text, rest[1:]
        if kind == "joint":
            kv = _kv(args, line, {"spam": "switch", "postselect": "switch", "label": "label"})
            out = [("kind", "joint"), ("spam", kv.get("spam", (False, 0))[0]),
                   ("postselect", kv.get("postselect", (False, 0))[0])]
        elif kind == "parity":
            kv = _kv(args, line, {"mode": "cavity", "contrast": "switch", "label": "label"})
            out = [("kind", "parity"), ("mode", kv.get("mode", ("a", 0))[0]),
                   ("contrast", kv.get("contrast", (False, 0))[0])]
        elif kind in ("overlap", "nbar"):
            kv = _kv(args, line, {"label": "label"})
            out = [("kind", kind)]
        else:
            raise BadArgument(f"unknown measurement {kind!r}", line=line, column=rest[0].column)
        if "label" in kv:
            out.append(("label", kv["label"][0]))
        return make(out)

    if op == "set":
        if not rest:
            raise BadArgument("set needs key=value", line=line, column=column)
        kv = _kv(rest, line, {k: "real" for k in PARAM_KEYS})
        return make(sorted((k, v) for k, (v, _) in kv.items()))

    raise UnknownInstruction(f"unknown instruction {op!r}", line=line, column=column)


def _validate(ins: Instruction) -> None:
    def bad(msg):
        return BadArgument(msg, line=ins.line, column=ins.column)

    for key, v in ins.args:
        if isinstance(v, Placeholder):
            continue
        if isinstance(v, (float, complex)) and not np.isfinite(v):
            raise bad(f"{key} must be finite")
    get = ins.get
    if ins.op == "prep" and get("kind") == "fock":
        if get("n") < 0 or get("m") < 0:
            raise bad("occupations must be >= 0")
    elif ins.op == "bs":
        for key in ("theta", "t"):
            v = get(key)
            if isinstance(v, float) and v < 0:
                raise bad(f"{key} must be >= 0")
    elif ins.op == "wait":
        if isinstance(get("t"), float) and get("t") < 0:
            raise bad("t must be >= 0")


def parse(text: str) -> Program:
    """Parse program source; the first error raises with its line and column."""
    dims = config = mode = None
    sweep = None
    sweep_loc = None
    instructions: list[Instruction] = []
    for line, tokens in _statements(text):
        head, rest = tokens[0], tokens[1:]
        op = _ALIASES.get(head.text, head.text)
        if op in ("dims", "config", "mode"):
            if instructions:
                raise BadArgument(f"{op} must come before the first instruction",
                                  line=line, column=head.column)
            if (op == "dims" and dims) or (op == "config" and config) or (op == "mode" and mode):
                raise BadArgument(f"{op} given twice", line=line, column=head.column)
            if op == "dims":
                parts = [t for tok in rest for t in tok.text.split(",") if t]
                if len(parts) != 2:
                    raise BadArgument("dims takes two sizes", line=line, column=head.column)
                try:
                    dims = tuple(int(p) for p in parts)
                except ValueError:
                    raise BadArgument("dims must be integers", line=line, column=head.column) from None
                if min(dims) < 2:
                    raise BadArgument("dims must be >= 2", line=line, column=head.column)
            elif op == "config":
                if len(rest) != 1:
                    raise BadArgument("config takes one path", line=line, column=head.column)
                config = rest[0].text
            else:
                if len(rest) != 1 or rest[0].text not in MODES:
                    raise BadArgument("mode must be ideal or physical", line=line, column=head.column)
                mode = rest[0].text
            continue
        if op == "sweep":
            if sweep is not None:
                raise DuplicateSweep(f"second sweep clause (first on line {sweep_loc})",
                                     line=line, column=head.column)
            sweep = _parse_sweep(rest, line, head.column)
            sweep_loc = line
            continue
        instructions.append(_parse_instruction(op, rest, line, head.column))

    used = set().union(*(ins.placeholders() for ins in instructions)) if instructions else set()
    for ins in instructions:
        for name in ins.placeholders():
            if sweep is None or name != sweep.name:
                raise UnresolvedPlaceholder(f"placeholder ${name} has no matching sweep",
                                            line=ins.line, column=ins.column)
    if sweep is not None and sweep.name not in used:
        raise UnresolvedPlaceholder(f"sweep variable ${sweep.name} is never used", line=sweep_loc)
    return Program(tuple(instructions), dims or DEFAULT_DIMS, config, mode or IDEAL, sweep)


def _parse_sweep(rest: list[_Token], line: int, column: int) -> Sweep:
    words = [t.text for t in rest]
    if len(words) != 7 or words[1] != "from" or words[3] != "to" or words[5] != "steps":
        raise BadArgument("expected: sweep NAME from X to Y steps N", line=line, column=column)
    name = words[0]
    if not re.fullmatch(r"[A-Za-z_]\w*", name):
        raise BadArgument(f"bad sweep name {name!r}", line=line, column=rest[0].column)
    try:
        start, stop = _real(words[2]), _real(words[4])
    except ValueError:
        raise BadArgument("sweep bounds must be numbers", line=line, column=rest[2].column) from None
    steps = _positional_int(rest[6], line, "steps")
    if steps < 0:
        raise BadArgument("steps must be >= 0", line=line, column=rest[6].column)
    return Sweep(name, start, stop, steps)


def parse_file(path: str | Path) -> Program:
    return parse(Path(path).read_text(encoding="utf-8"))


# --- canonical printer -----------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, Placeholder):
        return str(v)
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, complex):
        return repr(v).replace(" ", "")
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_instruction(ins: Instruction) -> str:
    if ins.op == "prep":
        kind = ins.get("kind")
        if kind == "fock":
            return f"prep fock {ins.get('n')} {ins.get('m')}"
        if kind == "coherent":
            return f"prep coherent {_fmt(ins.get('alpha_a'))} {_fmt(ins.get('alpha_b'))}"
        return "prep state21"
    if ins.op == "measure":
        rest = [f"{k}={_fmt(v)}" for k, v in ins.args if k != "kind"]
        return " ".join(["measure", ins.get("kind"), *rest])
    return " ".join([ins.op, *(f"{k}={_fmt(v)}" for k, v in ins.args)])


def format_program(program: Program) -> str:
    lines = [f"dims {program.dims[0]} {program.dims[1]}"]
    if program.config:
        lines.append(f"config {program.config}")
    lines.append(f"mode {program.mode}")
    if program.sweep:
        s = program.sweep
        lines.append(f"sweep {s.name} from {s.start!r} to {s.stop!r} steps {s.steps}")
    lines.extend(format_instruction(i) for i in program.instructions)
    return "\n".join(lines) + "\n"


# --- execution -------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementRecord:
    index: int
    kind: str
    label: str | None
    values: dict[str, float]
    time: float


@dataclass
class ExecutionTrace:
    measurements: list[MeasurementRecord]
    gates: list[tuple[int, GateRecord]]
    total_duration: float
    final_state: QuantumState | None
    params: DeviceParams
    snapshots: list[QuantumState] | None = None

    def values(self) -> dict[str, float]:
        """Measured observables, prefixed per measurement when there are several."""
        out: dict[str, float] = {}
        several = len(self.measurements) > 1
        for k, rec in enumerate(self.measurements):
            prefix = f"{rec.label}_" if rec.label else (f"m{k}_" if several else "")
            for name, v in rec.values.items():
                out[prefix + name] = v
        return out


def joint_column(n: int, m: int, dims: Sequence[int]) -> str:
    return f"P{n}_{m}" if max(dims) > 10 else f"P{n}{m}"


def _resolve_params(program: Program, params: DeviceParams | None) -> DeviceParams:
    if params is not None:
        return params
    return load_config(program.config) if program.config else load_config()


def _check_fits(space: ModeSpace, occupations: Sequence[int]) -> None:
    for n, d in zip(occupations, space.dims):
        if n >= d:
            raise OutOfTruncation(f"occupation {n} does not fit dimension {d}")


def _prepare(ins: Instruction, space: ModeSpace, params: DeviceParams,
             mode: str) -> tuple[QuantumState, GateRecord | None]:
    kind = ins.get("kind")
    if kind == "fock":
        occ = (ins.get("n"), ins.get("m"))
        _check_fits(space, occ)
        return fock_state(space, occ), None
    if kind == "coherent":
        a = coherent_state(space.dims[0], ins.get("alpha_a"))
        b = coherent_state(space.dims[1], ins.get("alpha_b"))
        return product_state(a, b), None
    return prepare_21(params, mode, space.dims)


def _measure(ins: Instruction, state: QuantumState, params: DeviceParams, mode: str,
             records: list[GateRecord]) -> dict[str, float]:
    kind = ins.get("kind")
    dims = state.space.dims
    if kind == "joint":
        dist = joint_number_probs(state, params, apply_spam=ins.get("spam"), records=records)
        if ins.get("postselect"):
            dist = postselect(dist, records)
        scaled = dist.scaled
        out = {joint_column(n, m, dims): float(scaled[n, m])
               for n in range(dims[0]) for m in range(dims[1])}
        out["survival"] = dist.survival
        return out
    if kind == "parity":
        idx = 0 if ins.get("mode") == "a" else 1
        value = parity_expectation(state, idx, params, apply_contrast=ins.get("contrast"))
        return {f"parity_{ins.get('mode')}": value}
    if kind == "nbar":
        return {"nbar_a": mean_photon_number(state, 0), "nbar_b": mean_photon_number(state, 1)}
    # swap test on a copy: 50:50 splitter then Alice's parity
    out, _ = beamsplitter(state, BeamsplitterSpec(theta=BS_THETA, phi=SWAP_TEST_PHI, mode=mode),
                          params)
    contrast = params.parity_contrast if mode == PHYSICAL else 1.0
    return {"overlap": parity_expectation(out, 0, params) * contrast}


def _gates_follow(instructions: Sequence[Instruction], index: int) -> bool:
    return any(ins.op in ("bs", "dps", "displace", "wait") for ins in instructions[index + 1:])


def execute(program: Program, params: DeviceParams | None = None,
            keep_snapshots: bool = False) -> ExecutionTrace:
    """Run a program without a sweep clause (bind the sweep value first)."""
    if program.sweep is not None:
        raise UnresolvedPlaceholder("program has a sweep; use sweep_dataset or bind a value")
    params = _resolve_params(program, params)
    space = ModeSpace(program.dims)
    state: QuantumState | None = None
    gates: list[tuple[int, GateRecord]] = []
    records: list[GateRecord] = []
    measurements: list[MeasurementRecord] = []
    snapshots: list[QuantumState] | None = [] if keep_snapshots else None
    clock = 0.0
    for index, ins in enumerate(program.instructions):
        mode = ins.get("mode") if ins.op in ("bs", "dps") and ins.get("mode") else program.mode
        try:
            rec = None
            if ins.op == "set":
                params = params.replace(**dict(ins.args))
            elif ins.op == "prep":
                state, rec = _prepare(ins, space, params, program.mode)
                records = []
            else:
                if state is None:
                    raise BadArgument(f"{ins.op} before any prep")
                if ins.op == "bs":
                    theta, t = ins.get("theta"), ins.get("t")
                    spec = BeamsplitterSpec(theta=theta, phi=ins.get("phi"), mode=mode, duration=t)
                    state, rec = beamsplitter(state, spec, params)
                elif ins.op == "dps":
                    state, rec = dps(state, ins.get("phi"), params, mode)
                elif ins.op == "displace":
                    state = displace(state, 0 if ins.get("mode") == "a" else 1, ins.get("alpha"))
                elif ins.op == "wait":
                    state, rec = wait(state, ins.get("t"), params, program.mode)
                elif ins.op == "measure":
                    values = _measure(ins, state, params, mode, records)
                    measurements.append(MeasurementRecord(index, ins.get("kind"), ins.get("label"),
                                                          values, clock))
                    if program.mode == PHYSICAL and _gates_follow(program.instructions, index):
                        # a mid-program readout keeps the cavities idle for the selective pulse
                        state = idle(state, params.selective_pulse_time, params)
                        rec = GateRecord("readout", params.selective_pulse_time)
        except CavityError as exc:
            exc.instruction_index = index
            if exc.line is None:
                exc.line, exc.column = ins.line, ins.column
            raise
        if rec is not None:
            gates.append((index, rec))
            records.append(rec)
            clock += rec.duration
        if snapshots is not None and state is not None:
            snapshots.append(state)
    return ExecutionTrace(measurements, gates, clock, state, params, snapshots)


@dataclass
class Dataset:
    """Rows of floats with named columns."""

    columns: list[str]
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.rows.size and self.rows.shape[1] != len(self.columns):
            raise ValueError("row width does not match the header")

    def __len__(self) -> int:
        return 0 if not self.rows.size else self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {c: self.column(c) for c in self.columns}

    def to_csv(self, target=None) -> str:
        buf = io.StringIO(newline="")
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join("%.12e" % v for v in row) + "\n")
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text, encoding="utf-8", newline="\n")
        return text

    @classmethod
    def from_csv(cls, source) -> "Dataset":
        text = Path(source).read_text(encoding="utf-8") if not isinstance(source, io.StringIO) \
            else source.getvalue()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty CSV")
        columns = lines[0].split(",")
        rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
        return cls(columns, np.array(rows) if rows else np.empty((0, len(columns))))


def sweep_dataset(program: Program, params: DeviceParams | None = None) -> Dataset:
    """Execute every grid point of the sweep; one row per point, in grid order."""
    if program.sweep is None:
        raise UnresolvedPlaceholder("program has no sweep clause")
    params = _resolve_params(program, params)
    grid = program.sweep.grid()
    columns = None
    rows = []
    for value in grid:
        values = execute(program.bind(value), params).values()
        if columns is None:
            columns = [program.sweep.name, *values]
        rows.append([value, *values.values()])
    return Dataset(columns, np.array(rows))
