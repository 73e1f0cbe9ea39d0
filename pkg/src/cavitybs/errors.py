"""Exception hierarchy.

Every error carries an optional source location (``line``, ``column``) and,
for runtime failures inside a program, the ``instruction_index``.
"""

from __future__ import annotations


class CavityError(Exception):
    """Base class for all package errors."""

    def __init__(self, message: str, *, line: int | None = None,
                 column: int | None = None, instruction_index: int | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column
        self.instruction_index = instruction_index

    def __str__(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
            if self.column is not None:
                where.append(f"column {self.column}")
        if self.instruction_index is not None:
            where.append(f"instruction {self.instruction_index}")
        if where:
            return f"{self.message} ({', '.join(where)})"
        return self.message


# fock-core
class InvalidDimension(CavityError, ValueError):
    pass


class OutOfTruncation(CavityError, ValueError):
    pass


class TruncationTooSmall(CavityError, ArithmeticError):
    """Probability weight would be lost at the truncation boundary."""


class StateKindError(CavityError, TypeError):
    """A pure state was passed where a density matrix is required (or vice versa)."""


# device-model
class InvalidParams(CavityError, ValueError):
    pass


class ConfigError(CavityError, ValueError):
    """Malformed device configuration file."""


class SingularFormula(CavityError, ZeroDivisionError):
    """A device formula was evaluated at a pole (resonant drive, zero detuning, ...)."""


class InvalidCoupling(CavityError, ValueError):
    pass


# evolution
class InvalidHamiltonian(CavityError, ValueError):
    pass


class InvalidSpace(CavityError, ValueError):
    pass


class StepTooLarge(CavityError, ArithmeticError):
    pass


# measurement
class AllDiscarded(CavityError, ArithmeticError):
    pass


# program-dsl
class ProgramError(CavityError, ValueError):
    """Parse-time error in an interferometer program."""


class UnknownInstruction(ProgramError):
    pass


class BadArgument(ProgramError):
    pass


class DuplicateSweep(ProgramError):
    pass


class UnresolvedPlaceholder(ProgramError):
    pass


class EmptyGrid(ProgramError):
    pass


# estimation
class FitError(CavityError, ArithmeticError):
    pass


class FitDegenerate(FitError):
    pass


class FitFailed(FitError):
    def __init__(self, message: str, diagnostics: dict | None = None, **kw):
        super().__init__(message, **kw)
        self.diagnostics = diagnostics or {}


class InvalidDataset(CavityError, ValueError):
    pass


# Exceptions that mean a numerical guard tripped (CLI exit code 4).
NUMERICAL_GUARDS = (TruncationTooSmall, StepTooLarge, FitError, AllDiscarded, SingularFormula)
