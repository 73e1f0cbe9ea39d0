"""Nonlinear least-squares fits for calibration data.

Models are parametrized internally by decay *rates* so that an undamped
signal sits at rate 0 instead of tau = inf; :class:`FitResult` reports times.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import FitDegenerate, FitError, FitFailed, InvalidDataset

MAX_ITER = 500
RTOL = 1e-10
GTOL = 1e-9
STALL_GTOL = 1e-6


@dataclass(frozen=True)
class FitModel:
    name: str
    param_names: tuple[str, ...]
    units: tuple[str, ...]
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray]

    @property
    def arity(self) -> int:
        return len(self.param_names)

    def __call__(self, t, p):
        return self.func(np.asarray(t, float), np.asarray(p, float))


def _sinusoid(t, p):
    amp, g1, gphi, f, phase, c = p
    e1, e2 = np.exp(-g1 * t), np.exp(-gphi * t)
    return amp * e1 * (1 + e2 * np.sin(2 * np.pi * f * t + phase)) / 2 + c


def _sinusoid_jac(t, p):
    amp, g1, gphi, f, phase, c = p
    e1, e2 = np.exp(-g1 * t), np.exp(-gphi * t)
    arg = 2 * np.pi * f * t + phase
    s, co = np.sin(arg), np.cos(arg)
    base = e1 * (1 + e2 * s) / 2
    return np.column_stack([
        base,
        -t * amp * base,
        -t * amp * e1 * e2 * s / 2,
        np.pi * t * amp * e1 * e2 * co,
        amp * e1 * e2 * co / 2,
        np.ones_like(t),
    ])


def _exponential(t, p):
    amp, rate, c = p
    return amp * np.exp(-rate * t) + c


def _exponential_jac(t, p):
    amp, rate, c = p
    e = np.exp(-rate * t)
    return np.column_stack([e, -t * amp * e, np.ones_like(t)])


DECAYING_SINUSOID = FitModel(
    "decaying-sinusoid", ("amplitude", "rate_1", "rate_phi", "frequency", "phase", "offset"),
    ("-", "1/us", "1/us", "MHz", "rad", "-"), _sinusoid, _sinusoid_jac)
EXPONENTIAL = FitModel(
    "exponential", ("amplitude", "rate", "offset"), ("-", "1/us", "-"),
    _exponential, _exponential_jac)


@dataclass
class FitResult:
    model: str
    params: np.ndarray
    param_names: tuple[str, ...]
    rss: float
    iterations: int
    converged: bool
    gradient_norm: float
    covariance: np.ndarray | None = None
    estimates: dict[str, float] = field(default_factory=dict)
    units: dict[str, str] = field(default_factory=dict)

    def stderr(self) -> dict[str, float]:
        if self.covariance is None:
            return {}
        return {n: float(math.sqrt(max(v, 0.0)))
                for n, v in zip(self.param_names, np.diag(self.covariance))}

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "estimates": {k: _finite_or_none(v) for k, v in self.estimates.items()},
            "units": self.units,
            "rss": self.rss,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
        }


def _finite_or_none(v: float):
    return float(v) if math.isfinite(v) else None


def _rate_to_time(rate: float, span: float) -> float:
    # a rate that decays less than 1e-9 over the record is indistinguishable from none
    return math.inf if rate * span <= 1e-9 else float(1.0 / rate)


def _decrement(jac: np.ndarray, r: np.ndarray, ynorm: float) -> float:
    """Gradient norm in the Gauss-Newton metric, sqrt(g^T (J^T J)^+ g) / |y|.

    This is the residual reduction still available from a full Gauss-Newton
    step, so it stays meaningful when the Jacobian is badly conditioned.
    """
    step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
    return float(np.linalg.norm(jac @ step)) / ynorm


def levenberg_marquardt(model: FitModel, t: np.ndarray, y: np.ndarray, p0: np.ndarray,
                        max_iter: int = MAX_ITER) -> tuple[np.ndarray, float, int, bool, float]:
    """Damped Gauss-Newton with Marquardt diagonal scaling.

    Returns ``(params, rss, iterations, converged, gradient_norm)`` with the
    gradient norm measured by :func:`_decrement`.
    Raises :class:`FitFailed` if the iteration budget runs out.
    """
    p = np.array(p0, float)
    r = model.func(t, p) - y
    rss = float(r @ r)
    ynorm = max(float(np.linalg.norm(y)), 1e-300)
    lam = 1e-3
    it = 0
    small_steps = 0
    for it in range(1, max_iter + 1):
        jac = model.jac(t, p)
        grad = jac.T @ r
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-300)
        gnorm = _decrement(jac, r, ynorm)
        if gnorm <= GTOL:
            return p, rss, it, True, gnorm
        accepted = False
        while lam < 1e20:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = p + step
            r_new = model.func(t, p_new) - y
            rss_new = float(r_new @ r_new)
            if np.isfinite(rss_new) and rss_new <= rss:
                accepted = True
                break
            lam *= 4
        if not accepted:
            return p, rss, it, gnorm <= STALL_GTOL, gnorm
        rel = (rss - rss_new) / max(rss, 1e-300)
        rel_step = float(np.linalg.norm(step) / max(np.linalg.norm(p_new), 1e-300))
        p, r, rss = p_new, r_new, rss_new
        lam = max(lam / 3, 1e-12)
        small_steps = small_steps + 1 if (rel < RTOL and rel_step < 1e-8) else 0
        if small_steps >= 2 or rss <= 1e-32 * ynorm ** 2:
            gnorm = _decrement(model.jac(t, p), r, ynorm)
            return p, rss, it, gnorm <= STALL_GTOL, gnorm
    raise FitFailed(f"{model.name} fit did not converge in {max_iter} iterations",
                    {"params": p.tolist(), "rss": rss, "lambda": lam})


def _covariance(model: FitModel, t, p, rss) -> np.ndarray | None:
    jac = model.jac(t, p)
    dof = len(t) - model.arity
    if dof <= 0:
        return None
    try:
        return np.linalg.pinv(jac.T @ jac) * rss / dof
    except np.linalg.LinAlgError:
        return None


def _prepare(t, y, min_points: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if t.shape != y.shape or t.ndim != 1:
        raise InvalidDataset("t and y must be 1-d arrays of equal length")
    if len(t) < min_points:
        raise InvalidDataset(f"need at least {min_points} points, got {len(t)}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise InvalidDataset("data contain non-finite values")
    order = np.argsort(t, kind="stable")
    t, y = t[order], y[order]
    if np.ptp(y) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise FitDegenerate("data are constant; nothing to fit")
    return t, y


def dominant_frequency(t: np.ndarray, y: np.ndarray, oversample: int = 8) -> float:
    """Peak of a direct discrete Fourier magnitude scan (handles uneven sampling)."""
    span = t[-1] - t[0]
    dt = np.min(np.diff(t)[np.diff(t) > 0])
    nyquist = 0.5 / dt
    freqs = np.arange(1, int(nyquist * span * oversample) + 1) / (span * oversample)
    yc = y - y.mean()
    mags = np.abs(np.exp(-2j * np.pi * np.outer(freqs, t)) @ yc)
    return float(freqs[np.argmax(mags)])


def _envelope_rate(t: np.ndarray, y: np.ndarray, f: float) -> float:
    period = 1.0 / f
    windows = np.floor((t - t[0]) / period).astype(int)
    centers, amps = [], []
    for w in np.unique(windows):
        sel = windows == w
        if sel.sum() < 3:
            continue
        amp = np.ptp(y[sel]) / 2
        if amp > 0:
            centers.append(t[sel].mean())
            amps.append(amp)
    if len(amps) < 2:
        return 0.0
    slope = np.polyfit(centers, np.log(amps), 1)[0]
    return max(-float(slope), 0.0)


def _linear_amp_offset(basis: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    design = np.column_stack([basis, np.ones_like(basis)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = design @ coef - y
    return float(coef[0]), float(coef[1]), float(resid @ resid)


def fit_decaying_sinusoid(t, y) -> FitResult:
    """Fit y = A e^{-t/tau_1} [1 + e^{-t/tau_phi} sin(2 pi f t + phase)] / 2 + c."""
    t, y = _prepare(t, y, 12)
    span = t[-1] - t[0]
    f0 = dominant_frequency(t, y)
    if f0 * span < 2:
        raise FitDegenerate(f"data span {f0 * span:.2f} periods; need at least 2")
    total_rate = _envelope_rate(t, y, f0)
    g1 = gphi = total_rate / 2
    best = None
    for phase in np.linspace(0, 2 * np.pi, 16, endpoint=False):
        e1, e2 = np.exp(-g1 * t), np.exp(-gphi * t)
        basis = e1 * (1 + e2 * np.sin(2 * np.pi * f0 * t + phase)) / 2
        amp, c, cost = _linear_amp_offset(basis, y)
        if amp > 0 and (best is None or cost < best[0]):
            best = (cost, np.array([amp, g1, gphi, f0, phase, c]))
    if best is None:
        raise FitFailed("no positive-amplitude starting point", {"frequency": f0})
    p, rss, it, conv, gnorm = levenberg_marquardt(DECAYING_SINUSOID, t, y, best[1])
    if p[0] < 0:
        if abs(p[1]) * span > 1e-9:
            raise FitFailed("fit converged to a negative amplitude", {"params": p.tolist()})
        # without relaxation, (-A, phase + pi, c + A) is the same curve
        p[0], p[4], p[5] = -p[0], p[4] + math.pi, p[5] + p[0]
    p[4] = math.remainder(p[4], 2 * math.pi)
    est = {
        "amplitude": float(p[0]),
        "tau_1": _rate_to_time(p[1], span),
        "tau_phi": _rate_to_time(p[2], span),
        "frequency": float(p[3]),
        "phase": float(p[4]),
        "offset": float(p[5]),
    }
    units = {"amplitude": "-", "tau_1": "us", "tau_phi": "us", "frequency": "MHz",
             "phase": "rad", "offset": "-"}
    return FitResult(DECAYING_SINUSOID.name, p, DECAYING_SINUSOID.param_names, rss, it, conv,
                     gnorm, _covariance(DECAYING_SINUSOID, t, p, rss), est, units)


def fit_exponential(t, y) -> FitResult:
    """Fit y = A e^{-t/tau} + c."""
    t, y = _prepare(t, y, 4)
    if np.any(y <= 0):
        raise InvalidDataset("exponential fit expects positive data")
    span = t[-1] - t[0]
    best = None
    for rate in np.concatenate([[0.0], np.logspace(-4, 3, 141) / span]):
        amp, c, cost = _linear_amp_offset(np.exp(-rate * t), y)
        if best is None or cost < best[0]:
            best = (cost, np.array([amp, rate, c]))
    if best[1][1] == 0.0:
        # constant basis: split the level so the Jacobian is not rank-deficient
        best[1][:] = [np.ptp(y), 1e-3 / span, float(y.min())]
    p, rss, it, conv, gnorm = levenberg_marquardt(EXPONENTIAL, t, y, best[1])
    if abs(p[0]) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise FitDegenerate("fitted amplitude is zero")
    est = {"amplitude": float(p[0]), "tau": _rate_to_time(p[1], span), "offset": float(p[2])}
    units = {"amplitude": "-", "tau": "us", "offset": "-"}
    return FitResult(EXPONENTIAL.name, p, EXPONENTIAL.param_names, rss, it, conv, gnorm,
                     _covariance(EXPONENTIAL, t, p, rss), est, units)


def bs_decoherence_time(tau1: float, tau_phi: float) -> float:
    """Effective decoherence time: 1/tau_bs = 1/(2 tau_1) + 1/tau_phi."""
    if not (tau1 > 0 and tau_phi > 0):
        raise ValueError("decoherence times must be > 0")
    rate = 1.0 / (2.0 * tau1) + 1.0 / tau_phi
    return math.inf if rate == 0 else 1.0 / rate


def bs_infidelity(t_bs: float, tau_bs: float) -> float:
    if not (t_bs > 0 and tau_bs > 0):
        raise ValueError("times must be > 0")
    return t_bs / tau_bs


def _columns(dataset) -> dict[str, np.ndarray]:
    if isinstance(dataset, Mapping):
        return {k: np.asarray(v, float) for k, v in dataset.items()}
    rows = list(dataset)
    if not rows:
        raise InvalidDataset("empty dataset")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def hom_contrast_report(dataset, time_key: str = "t", p11_key: str = "P11") -> dict[str, float]:
    cols = _columns(dataset)
    if p11_key not in cols or time_key not in cols:
        raise InvalidDataset(f"dataset needs {time_key!r} and {p11_key!r} columns")
    t, p11 = cols[time_key], cols[p11_key]
    at_zero = np.flatnonzero(np.abs(t) <= 1e-12)
    if at_zero.size == 0:
        raise InvalidDataset("dataset has no t = 0 baseline row")
    baseline = float(p11[at_zero[0]])
    if baseline <= 0:
        raise InvalidDataset("baseline P11 is zero")
    lo, hi = float(p11.min()), float(p11.max())
    return {
        "baseline_relative": (baseline - lo) / baseline,
        "visibility": (hi - lo) / (hi + lo),
        "extinction": 1.0 - lo,
        "baseline": baseline,
        "minimum": lo,
    }


def hom_contrast(dataset, time_key: str = "t", p11_key: str = "P11") -> float:
    """(P11(0) - min P11) / P11(0)."""
    return hom_contrast_report(dataset, time_key, p11_key)["baseline_relative"]


def gradient_check(model: FitModel, params: Sequence[float], t, h: float = 1e-6) -> float:
    """Largest relative gap between the analytic Jacobian and central differences."""
    if h == 0:
        return 0.0
    t = np.asarray(t, float)
    p = np.asarray(params, float)
    analytic = model.jac(t, p)
    worst = 0.0
    for i in range(len(p)):
        step = h * max(abs(p[i]), 1.0)
        up, down = p.copy(), p.copy()
        up[i] += step
        down[i] -= step
        numeric = (model.func(t, up) - model.func(t, down)) / (2 * step)
        col = analytic[:, i]
        scale = max(float(np.max(np.abs(col))), float(np.max(np.abs(numeric))))
        if scale == 0:
            continue
        worst = max(worst, float(np.max(np.abs(col - numeric))) / scale)
    return worst


@dataclass
class SingleExcitationReport:
    g: float
    frequency: float
    tau_1: float
    tau_phi: float
    tau_bs: float
    t_bs: float
    infidelity: float
    envelope_fit: FitResult | None
    oscillation_fit: FitResult

    def to_dict(self) -> dict:
        return {
            "g": _finite_or_none(self.g),
            "frequency": _finite_or_none(self.frequency),
            "tau_1": _finite_or_none(self.tau_1),
            "tau_phi": _finite_or_none(self.tau_phi),
            "tau_bs": _finite_or_none(self.tau_bs),
            "t_bs": _finite_or_none(self.t_bs),
            "infidelity": _finite_or_none(self.infidelity),
            "units": {"g": "MHz", "frequency": "MHz", "tau_1": "us", "tau_phi": "us",
                      "tau_bs": "us", "t_bs": "us", "infidelity": "-"},
            "envelope_fit": self.envelope_fit.to_dict() if self.envelope_fit else None,
            "oscillation_fit": self.oscillation_fit.to_dict(),
        }


def analyze_single_excitation(t, p10, p01) -> SingleExcitationReport:
    """Decompose single-photon exchange data into coupling, relaxation and dephasing.

    The envelope P10 + P01 gives tau_1; P10 divided by the envelope gives the
    exchange frequency (twice the coupling) and tau_phi.
    """
    t = np.asarray(t, float)
    p10 = np.asarray(p10, float)
    p01 = np.asarray(p01, float)
    envelope = p10 + p01
    try:
        env_fit = fit_exponential(t, envelope)
        tau1 = env_fit.estimates["tau"]
    except FitDegenerate:
        env_fit, tau1 = None, math.inf
    osc = fit_decaying_sinusoid(t, p10 / envelope)
    f = osc.estimates["frequency"]
    g = f / 2
    tau_phi = osc.estimates["tau_phi"]
    tau_bs = bs_decoherence_time(tau1, tau_phi)
    t_bs = 1.0 / (8.0 * g)
    return SingleExcitationReport(g, f, tau1, tau_phi, tau_bs, t_bs,
                                  bs_infidelity(t_bs, tau_bs) if math.isfinite(tau_bs) else 0.0,
                                  env_fit, osc)


def report_text(report: dict, prefix: str = "") -> str:
    """Flatten a nested report into ``key = value`` lines."""
    lines = []
    for k, v in report.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            lines.append(report_text(v, key + "."))
        else:
            lines.append(f"{key} = {json.dumps(v)}")
    return "\n".join(line for line in lines if line)
