"""Exception hierarchy shared across the workbench."""

from __future__ import annotations


class RiskbenchError(Exception):
    """Base class for all workbench errors."""


class MalformedCode(RiskbenchError):
    """A raw code string cannot be normalized under its coding system."""


class ParseError(RiskbenchError):
    """A data file failed to parse; carries file path and 1-based line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(message + where)


class MissingColumn(ParseError):
    """A required CSV/TSV column is absent."""


class SystemMismatch(RiskbenchError):
    """Operands belong to different coding systems."""


class UnsupportedSystem(RiskbenchError):
    """The coding system has no defined behaviour for this operation."""


class UnknownCode(RiskbenchError):
    """A catalog or table lookup missed and no default is allowed."""


class EmptyInput(RiskbenchError):
    """An operation received an empty collection it cannot act on."""


class ConfigError(RiskbenchError):
    """A configuration value violates its documented constraints."""


class EmptyCohort(RiskbenchError):
    """Statistics requested over a cohort with no samples."""


class NoPositives(RiskbenchError):
    """Feature selection or PR AUC requires at least one positive sample."""


class SingleClass(RiskbenchError):
    """Training or ranking metrics require both classes to be present."""


class NonFinite(RiskbenchError):
    """A numeric computation produced NaN or infinity."""


class EmptyAfterSkips(RiskbenchError):
    """Every token of a patient history was dropped (codes missing from the
    embedding table), leaving nothing to encode."""


class DegenerateBatch(RiskbenchError):
    """A loss was asked to operate on a batch with no usable instances."""


class FingerprintMismatch(RiskbenchError):
    """A model file was trained against a different embedding table."""


class CodeWithoutDescription(RiskbenchError):
    """Prompt construction found history codes absent from the catalog."""

    def __init__(self, codes):
        self.codes = list(codes)
        super().__init__("no catalog description for: " + ", ".join(self.codes))


class OverLength(RiskbenchError):
    """A prompt's token estimate exceeds the oracle's context limit."""

    def __init__(self, estimate: int, limit: int):
        self.estimate = estimate
        self.limit = limit
        super().__init__(f"prompt estimated at {estimate} tokens exceeds context limit {limit}")


class OracleUnreachable(RiskbenchError):
    """The token-probability oracle could not be contacted at all."""


class OracleError(RiskbenchError):
    """A single oracle request failed; the run continues."""


class MisalignedSets(RiskbenchError):
    """Paired model comparison requires identical patient id sets."""


class OverlapWarning(UserWarning):
    """Two ranges inside one case definition overlap (non-fatal)."""
