"""Dense linear algebra over truncated Fock spaces.

Operators are plain complex ``numpy`` arrays. Multi-mode spaces are built with
``np.kron`` and the first mode (Alice) is the slow index of the flattened basis,
so ``|n, m>`` sits at ``n * dims[1] + m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidDimension, OutOfTruncation, StateKindError, TruncationTooSmall

LEAKAGE_TOLERANCE = 1e-6

# tolerance ladder
TOL_CONSTRUCTION = 1e-12
TOL_EVOLUTION = 1e-10
TOL_POSITIVITY = 1e-8


@dataclass(frozen=True)
class ModeSpace:
    """Truncation dimensions of a product of bosonic modes."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise InvalidDimension("a mode space needs at least one mode")
        for d in dims:
            if d < 2:
                raise InvalidDimension(f"mode dimension must be >= 2, got {d}")
        object.__setattr__(self, "dims", dims)

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    def flatten(self, occupations: Sequence[int]) -> int:
        if len(occupations) != len(self.dims):
            raise OutOfTruncation(
                f"expected {len(self.dims)} occupations, got {len(occupations)}")
        for n, d in zip(occupations, self.dims):
            if not 0 <= n < d:
                raise OutOfTruncation(f"occupation {n} outside truncation [0, {d})")
        return int(np.ravel_multi_index(tuple(occupations), self.dims))

    def unflatten(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.total_dim:
            raise OutOfTruncation(f"index {index} outside [0, {self.total_dim})")
        return tuple(int(i) for i in np.unravel_index(index, self.dims))

    def embed(self, op: np.ndarray, mode: int) -> np.ndarray:
        """Lift a single-mode operator onto ``mode`` of this space."""
        if op.shape != (self.dims[mode], self.dims[mode]):
            raise InvalidDimension(
                f"operator of shape {op.shape} does not act on mode {mode} (dim {self.dims[mode]})")
        factors = [np.eye(d) for d in self.dims]
        factors[mode] = op
        return tensor(*factors)

    def number(self, mode: int) -> np.ndarray:
        return self.embed(number_op(self.dims[mode]), mode)

    def lowering(self, mode: int) -> np.ndarray:
        return self.embed(annihilation_op(self.dims[mode]), mode)

    def occupation_grid(self, mode: int) -> np.ndarray:
        """Photon number of ``mode`` for every flattened basis index."""
        grids = np.indices(self.dims).reshape(len(self.dims), -1)
        return grids[mode]


def annihilation_op(dim: int) -> np.ndarray:
    if dim < 2:
        raise InvalidDimension(f"annihilation operator needs dim >= 2, got {dim}")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def creation_op(dim: int) -> np.ndarray:
    return annihilation_op(dim).conj().T


def number_op(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def parity_op(dim: int) -> np.ndarray:
    if dim < 1:
        raise InvalidDimension(f"parity operator needs dim >= 1, got {dim}")
    return np.diag((-1.0) ** np.arange(dim)).astype(complex)


def tensor(*ops: np.ndarray) -> np.ndarray:
    out = np.asarray(ops[0])
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def is_hermitian(m: np.ndarray, tol: float = TOL_CONSTRUCTION) -> bool:
    return m.shape[0] == m.shape[1] and bool(np.all(np.abs(m - m.conj().T) <= tol))


@dataclass(frozen=True, eq=False)
class QuantumState:
    """A pure state vector or density matrix over a :class:`ModeSpace`.

    ``leakage`` accumulates probability weight that was discarded (and
    renormalized away) by truncation.
    """

    space: ModeSpace
    data: np.ndarray
    kind: str = "pure"
    leakage: float = 0.0
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("pure", "density"):
            raise StateKindError(f"unknown state kind {self.kind!r}")
        data = np.array(self.data, dtype=complex)
        n = self.space.total_dim
        expected = (n,) if self.kind == "pure" else (n, n)
        if data.shape != expected:
            raise InvalidDimension(f"{self.kind} state of shape {data.shape}, expected {expected}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def is_pure(self) -> bool:
        return self.kind == "pure"

    def density(self) -> "QuantumState":
        if self.kind == "density":
            return self
        return QuantumState(self.space, np.outer(self.data, self.data.conj()),
                            "density", self.leakage, self.warnings)

    def replace(self, data: np.ndarray, *, extra_leakage: float = 0.0,
                warning: str | None = None) -> "QuantumState":
        kind = "pure" if np.ndim(data) == 1 else "density"
        warns = self.warnings + ((warning,) if warning else ())
        return QuantumState(self.space, data, kind, self.leakage + extra_leakage, warns)

    def probabilities(self) -> np.ndarray:
        if self.is_pure:
            return np.abs(self.data) ** 2
        return np.real(np.diag(self.data)).copy()

    def trace(self) -> float:
        if self.is_pure:
            return float(np.vdot(self.data, self.data).real)
        return float(np.trace(self.data).real)

    def expect(self, op: np.ndarray) -> complex:
        if self.is_pure:
            return complex(np.vdot(self.data, op @ self.data))
        return complex(np.trace(op @ self.data))

    def mode_probabilities(self, mode: int) -> np.ndarray:
        p = self.probabilities().reshape(self.space.dims)
        axes = tuple(i for i in range(self.space.n_modes) if i != mode)
        return p.sum(axis=axes)

    def check(self) -> None:
        """Raise ``AssertionError`` if the state violates its invariants."""
        if self.is_pure:
            assert abs(self.trace() - 1) <= TOL_EVOLUTION, f"norm {self.trace()}"
            return
        rho = self.data
        assert abs(self.trace() - 1) <= TOL_EVOLUTION, f"trace {self.trace()}"
        assert np.max(np.abs(rho - rho.conj().T)) <= TOL_EVOLUTION, "not Hermitian"
        assert np.linalg.eigvalsh(rho).min() >= -TOL_POSITIVITY, "not positive"


def fock_state(space: ModeSpace, occupations: Sequence[int]) -> QuantumState:
    vec = np.zeros(space.total_dim, dtype=complex)
    vec[space.flatten(occupations)] = 1.0
    return QuantumState(space, vec)


def coherent_amplitudes(dim: int, alpha: complex) -> tuple[np.ndarray, float]:
    """Truncated, renormalized coherent amplitudes and the discarded weight."""
    if dim < 2:
        raise InvalidDimension(f"coherent state needs dim >= 2, got {dim}")
    n = np.arange(dim)
    # log-space factorials keep large n finite
    logmag = -abs(alpha) ** 2 / 2 + n * np.log(abs(alpha) if alpha != 0 else 1.0) \
        - 0.5 * np.array([math.lgamma(k + 1) for k in n])
    amps = np.exp(logmag) * np.exp(1j * np.angle(alpha) * n) if alpha != 0 else (n == 0).astype(complex)
    kept = float(np.sum(np.abs(amps) ** 2))
    leakage = max(0.0, 1.0 - kept)
    return amps / math.sqrt(kept), leakage


def coherent_state(dim: int, alpha: complex,
                   leakage_tolerance: float = LEAKAGE_TOLERANCE) -> QuantumState:
    amps, leakage = coherent_amplitudes(dim, complex(alpha))
    if leakage > leakage_tolerance:
        raise TruncationTooSmall(
            f"coherent state alpha={alpha} loses {leakage:.3g} of its weight at dim {dim}")
    return QuantumState(ModeSpace((dim,)), amps, leakage=leakage)


def product_state(*states: QuantumState) -> QuantumState:
    """Tensor product of states (pure if all inputs are pure)."""
    space = ModeSpace(tuple(d for s in states for d in s.space.dims))
    leakage = sum(s.leakage for s in states)
    if all(s.is_pure for s in states):
        return QuantumState(space, tensor(*[s.data for s in states]), "pure", leakage)
    return QuantumState(space, tensor(*[s.density().data for s in states]), "density", leakage)


def partial_trace(rho: QuantumState, keep: int) -> QuantumState:
    if rho.is_pure:
        raise StateKindError("partial_trace needs a density matrix; call .density() first")
    dims = rho.space.dims
    n = len(dims)
    if not 0 <= keep < n:
        raise InvalidDimension(f"mode {keep} not in a {n}-mode space")
    t = rho.data.reshape(dims + dims)
    # move the kept mode to the front on both sides, flatten the rest, trace it out
    order = [keep] + [i for i in range(n) if i != keep]
    t = t.transpose(order + [n + i for i in order])
    d = dims[keep]
    rest = math.prod(dims) // d
    t = t.reshape(d, rest, d, rest)
    reduced = np.einsum("ajbj->ab", t)
    return QuantumState(ModeSpace((d,)), reduced, "density", rho.leakage)


def random_pure_state(space: ModeSpace, rng: np.random.Generator) -> QuantumState:
    v = rng.normal(size=space.total_dim) + 1j * rng.normal(size=space.total_dim)
    return QuantumState(space, v / np.linalg.norm(v))


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> QuantumState:
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    return QuantumState(ModeSpace((dim,)), (rho + rho.conj().T) / 2, "density")
