"""Device constants and the drive-engineering formulas.

Units: every frequency is cyclic (MHz, i.e. omega / 2pi) and every time is in
microseconds, so MHz * us is dimensionless. Conversion to angular units happens
only when a Hamiltonian is built.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError, InvalidCoupling, InvalidParams, SingularFormula

FAR_DETUNED = math.inf


@dataclass(frozen=True)
class DeviceParams:
    # mode frequencies
    omega_a: float = 5554.0
    omega_b: float = 6543.0
    omega_ge: float = 5901.0
    # dispersive shifts
    chi_ac: float = 0.62
    chi_bc: float = 0.26
    chi_1: float = 1.01
    # Kerr while the drives are on, and the bare (undriven) self-Kerr
    chi_aa: float = 0.008
    chi_bb: float = 0.005
    chi_ab: float = 0.001
    bare_chi_aa: float = 0.004
    bare_chi_bb: float = 0.002
    alpha: float = 74.0
    kappa_tilde: float = 1.0 / (2 * math.pi * 50.0)
    # operating point of the engineered coupling
    g: float = 0.034
    omega_1: float = 6058.0
    omega_2: float = 7049.0
    ring_time: float = 0.1
    # cavity coherence
    t1_a: float = 450.0
    t1_b: float = 450.0
    tphi_a: float = 1125.0
    tphi_b: float = 1125.0
    drive_dephasing_factor: float = 1.0
    # coupler transmon coherence (only enters loss budgets)
    t1_c: float = 50.0
    t2_c: float = 12.5
    # measurement imperfections
    readout_scale: float = 0.82
    parity_contrast: float = 0.94
    p_exc: float = 0.01
    p_exc_per_xi: float = 0.1
    xi_ratio: float = 3.0
    selective_pulse_time: float = 4.8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("t1_a", "t1_b", "tphi_a", "tphi_b", "t1_c", "t2_c"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be > 0 (use inf for no decay)")
        for name in ("readout_scale", "parity_contrast"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise InvalidParams(f"{name} must lie in (0, 1], got {v}")
        if not 0 <= self.p_exc < 1:
            raise InvalidParams(f"p_exc must lie in [0, 1), got {self.p_exc}")
        for name in ("chi_ac", "chi_bc", "chi_1"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be > 0")
        for name in ("chi_aa", "chi_bb", "chi_ab", "bare_chi_aa", "bare_chi_bb", "g",
                     "ring_time", "kappa_tilde", "selective_pulse_time", "p_exc_per_xi"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be >= 0")
        if self.drive_dephasing_factor < 0:
            raise InvalidParams("drive_dephasing_factor must be >= 0")
        if self.xi_ratio <= 0:
            raise InvalidParams("xi_ratio must be > 0")

    def replace(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)

    @property
    def tau_1(self) -> float:
        """Single-excitation energy relaxation time while shared between the modes."""
        return 2.0 / (1.0 / self.t1_a + 1.0 / self.t1_b)

    @property
    def tau_phi(self) -> float:
        """Damping time of the single-excitation exchange oscillation due to dephasing."""
        rate = (1.0 / self.tphi_a + 1.0 / self.tphi_b) / 2.0 * self.drive_dephasing_factor
        return math.inf if rate == 0 else 1.0 / rate


@dataclass(frozen=True)
class DriveTone:
    epsilon: complex
    omega_d: float
    ring_time: float = 0.1

    def __post_init__(self):
        if self.ring_time < 0:
            raise InvalidParams("ring_time must be >= 0")


def drive_amplitude(tone: DriveTone, params: DeviceParams) -> complex:
    """Normalized drive amplitude xi in the displaced frame of the coupler."""
    denom = complex(params.kappa_tilde / 2, params.omega_ge - tone.omega_d)
    if denom == 0:
        raise SingularFormula("drive is resonant with an undamped coupler; xi undefined")
    return -1j * complex(tone.epsilon) / denom


def stark_shift(xi: complex, params: DeviceParams, delta: float = FAR_DETUNED) -> float:
    """AC Stark shift of the coupler frequency, with the near-detuned correction.

    ``delta`` is the drive detuning from the coupler; ``FAR_DETUNED`` drops the
    delta / (delta + alpha) factor.
    """
    base = -2.0 * params.alpha * abs(xi) ** 2
    if math.isinf(delta):
        return base
    if delta + params.alpha == 0:
        raise SingularFormula("delta + alpha = 0")
    return base * delta / (delta + params.alpha)


def coupling_strength(params: DeviceParams, xi1: complex, xi2: complex) -> float:
    if params.chi_ac < 0 or params.chi_bc < 0:
        raise InvalidParams("dispersive shifts must be non-negative")
    return math.sqrt(params.chi_ac * params.chi_bc) * abs(xi1) * abs(xi2)


def coupling_correction(g: float, params: DeviceParams, delta: float, d2: float,
                        da: float, db: float) -> float:
    """Coupling reduced by the slowly rotating non-resonant terms.

    Detunings are all measured from the coupler frequency: ``delta`` and ``d2``
    for the two drives, ``da`` and ``db`` for the two cavities.
    """
    total = delta + d2 + da + db
    if math.isinf(total):
        return g
    if total == 0 or total + 2 * params.alpha == 0:
        raise SingularFormula("coupling correction denominator vanishes")
    return g / (1.0 + 2.0 * params.alpha / total)


def drive_detunings(params: DeviceParams) -> tuple[float, float, float, float]:
    return (params.omega_1 - params.omega_ge, params.omega_2 - params.omega_ge,
            params.omega_a - params.omega_ge, params.omega_b - params.omega_ge)


def inverse_purcell(lambda_coupling: float, detuning: float, gamma: float) -> float:
    """Cavity decay inherited from an ancilla, large-detuning form."""
    if detuning == 0:
        raise SingularFormula("inverse Purcell rate undefined on resonance")
    return abs(lambda_coupling / detuning) ** 2 * gamma


def inverse_purcell_exact(lambda_coupling: float, detuning: float, gamma: float) -> float:
    """Golden-rule rate before the large-detuning expansion."""
    return -2.0 * abs(lambda_coupling) ** 2 * (1.0 / complex(detuning, gamma / 2)).imag


def bs_duration(g: float) -> float:
    """Drive time of a 50:50 beamsplitter at cyclic coupling ``g``."""
    if not g > 0:
        raise InvalidCoupling(f"coupling must be > 0, got {g}")
    return 1.0 / (8.0 * g)


def swap_duration(g: float) -> float:
    return 2.0 * bs_duration(g)


def xi_split(xi_product: float, params: DeviceParams) -> tuple[float, float]:
    """Split |xi1||xi2| into the two drive amplitudes using the configured ratio."""
    return math.sqrt(xi_product * params.xi_ratio), math.sqrt(xi_product / params.xi_ratio)


def excitation_probability(xi_product: float, params: DeviceParams) -> float:
    """Coupler excitation per beamsplitter, linear in drive power."""
    return min(params.p_exc_per_xi * xi_product, 0.999)


def selective_pulse_frequencies_injective(params: DeviceParams, n_max: int = 10,
                                          tol: float = 1e-9) -> bool:
    freqs = sorted(params.omega_ge - n * params.chi_ac - m * params.chi_bc
                   for n in range(n_max + 1) for m in range(n_max + 1))
    return all(b - a > tol for a, b in zip(freqs, freqs[1:]))


# --- config file -----------------------------------------------------------

UNITS = {
    **{k: "MHz" for k in ("omega_a", "omega_b", "omega_ge", "chi_ac", "chi_bc", "chi_1",
                          "chi_aa", "chi_bb", "chi_ab", "bare_chi_aa", "bare_chi_bb",
                          "alpha", "kappa_tilde", "g", "omega_1", "omega_2")},
    **{k: "us" for k in ("ring_time", "t1_a", "t1_b", "tphi_a", "tphi_b", "t1_c", "t2_c",
                         "selective_pulse_time")},
    **{k: "-" for k in ("drive_dephasing_factor", "readout_scale", "parity_contrast",
                        "p_exc", "p_exc_per_xi", "xi_ratio")},
}
UNIT_ALIASES = {"us": "us", "µs": "us", "μs": "us", "MHz": "MHz", "-": "-", "1": "-"}
DERIVED_KEYS = {"t2_a", "t2_b"}


def _parse_number(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    return float(t)


def parse_config(text: str, source: str = "<config>") -> DeviceParams:
    """Parse ``key = value  # unit`` lines into :class:`DeviceParams`.

    ``t2_a`` / ``t2_b`` may be given instead of ``tphi_*``; the pure dephasing
    time then follows from 1/T2 = 1/(2 T1) + 1/Tphi.
    """
    values: dict[str, float] = {}
    t2: dict[str, tuple[float, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body, _, comment = raw.partition("#")
        if not body.strip():
            continue
        key, eq, value = body.partition("=")
        key = key.strip()
        if not eq:
            raise ConfigError(f"{source}: expected 'key = value'", line=lineno)
        if key not in UNITS and key not in DERIVED_KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}", line=lineno)
        if key in values or key in t2:
            raise ConfigError(f"{source}: duplicate key {key!r}", line=lineno)
        unit_token = comment.split()[0] if comment.split() else None
        expected = "us" if key in DERIVED_KEYS else UNITS[key]
        if unit_token is None:
            raise ConfigError(f"{source}: {key} needs a unit comment ('# {expected}')", line=lineno)
        if UNIT_ALIASES.get(unit_token) != expected:
            raise ConfigError(f"{source}: {key} has unit {unit_token!r}, expected {expected!r}",
                              line=lineno)
        try:
            number = _parse_number(value)
        except ValueError:
            raise ConfigError(f"{source}: {key}: not a number: {value.strip()!r}",
                              line=lineno) from None
        if key in DERIVED_KEYS:
            t2[key] = (number, lineno)
        else:
            values[key] = number

    for mode in ("a", "b"):
        if f"t2_{mode}" not in t2:
            continue
        t2_val, lineno = t2[f"t2_{mode}"]
        if f"tphi_{mode}" in values:
            raise ConfigError(f"{source}: give either t2_{mode} or tphi_{mode}", line=lineno)
        t1 = values.get(f"t1_{mode}", DeviceParams.__dataclass_fields__[f"t1_{mode}"].default)
        rate = 1.0 / t2_val - 1.0 / (2.0 * t1)
        if rate < 0:
            raise ConfigError(f"{source}: t2_{mode} exceeds 2*t1_{mode}", line=lineno)
        values[f"tphi_{mode}"] = math.inf if rate == 0 else 1.0 / rate

    try:
        params = DeviceParams(**values)
    except InvalidParams as exc:
        raise ConfigError(f"{source}: {exc.message}") from None
    if not selective_pulse_frequencies_injective(params):
        raise ConfigError(f"{source}: selective-pulse frequencies collide for n, m <= 10")
    return params


def load_config(path: str | Path | None = None) -> DeviceParams:
    if path is None:
        text = resources.files("cavitybs.data").joinpath("device.cfg").read_text(encoding="utf-8")
        return parse_config(text, "device.cfg")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def format_config(params: DeviceParams) -> str:
    lines = []
    for f in fields(params):
        v = getattr(params, f.name)
        lines.append(f"{f.name} = {v!r}  # {UNITS[f.name]}")
    return "\n".join(lines) + "\n"
