"""Exception tree shared by every lcasim module.

Each class carries the process exit code the command line front-end reports
for it: 2 for invalid input, 3 for numeric failures and 4 for I/O problems.
"""


class LcasimError(Exception):
    """Base class for all lcasim errors."""
    exit_code = 1


# -- validation ---------------------------------------------------------------

class InputError(LcasimError, ValueError):
    """Raised when an input violates a documented precondition."""
    exit_code = 2


class ConfigError(InputError):
    pass


class MalformedInput(InputError):
    """Raised when an input file is missing, unreadable or lacks required columns."""


class MalformedRow(MalformedInput):
    """Raised when a single CSV row cannot be parsed.

    Args:
        line (int): 1-based line number in the source file (the header is line 1).
        reason (str): What was wrong with the row.
    """

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class EmptyInput(MalformedInput):
    pass


class NonUniformStep(InputError):
    pass


class IncompatibleResolution(InputError):
    pass


class DegenerateRange(InputError):
    pass


class WindowMismatch(InputError):
    pass


class TooFewSnapshots(InputError):
    pass


class BadModeIndex(InputError):
    pass


class ZoneMappingError(InputError):
    pass


class MissingZone(ZoneMappingError):
    pass


class AllZonesZero(ZoneMappingError):
    pass


class ZeroImpedanceBranch(InputError):
    pass


class IslandedBus(InputError):
    pass


class UnknownBus(InputError):
    pass


class EventOutsideWindow(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass


class ZeroTotalLoad(InputError):
    pass


# -- numeric ------------------------------------------------------------------

class NumericError(LcasimError, ArithmeticError):
    """Raised when a computation cannot produce a trustworthy result."""
    exit_code = 3


class RankDeficient(NumericError):
    pass


class DegenerateData(NumericError):
    pass


class ZeroEigenvalue(NumericError):
    pass


class Diverged(NumericError):
    """Raised when Newton-Raphson hits its iteration cap."""


class SimulationDiverged(NumericError):
    """Raised when a machine speed leaves the validity band.

    Args:
        message (str): Human readable description.
        trace: The partial `SimulationTrace` up to and including the offending sample.
    """

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)


class SingularEliminationBlock(NumericError):
    pass


class UnstableInitialization(NumericError):
    pass


# -- I/O ----------------------------------------------------------------------

class ArtifactError(LcasimError):
    exit_code = 4


class NothingToReport(ArtifactError):
    pass


def exit_code_for(exc: BaseException) -> int:
    """Maps an exception to the CLI exit code."""
    if isinstance(exc, LcasimError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 4
    # pydantic.ValidationError is a ValueError subclass
    if isinstance(exc, ValueError):
        return 2
    return 1
