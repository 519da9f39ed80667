"""Canonical domain types for longitudinal diagnosis records.

A patient record is an ordered list of visits; each visit holds the diagnosis
codes documented at that encounter, deduplicated but otherwise in order of
appearance. All types are frozen dataclasses and safe to share between
workers.

The canonical on-disk form is JSON Lines, one patient per line:

    {"patient_id": "...", "visits": [{"date": "YYYY-MM-DD",
        "codes": [{"system": "ICD10", "code": "F10.13"}, ...]}, ...]}
"""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass, field
from datetime import date

from .errors import MalformedCode, MissingColumn, ParseError, UnknownCode


class CodeSystem(str, enum.Enum):
    ICD9 = "ICD9"
    ICD10 = "ICD10"
    SNOMED = "SNOMED"


# Normalized shapes. ICD-10: letter + 2 alphanumerics, then up to 4 alphanumeric
# subcode characters after the dot. ICD-9: 3-digit category, or E + 3 digits /
# V + 2 digits, then up to 2 subcode digits.
_ICD10_RE = re.compile(r"^[A-Z][A-Z0-9]{2}(\.[A-Z0-9]{1,4})?$")
_ICD9_RE = re.compile(r"^(\d{3}|E\d{3}|V\d{2})(\.\d{1,2})?$")
_ICD9_CAT_LEN = {"E": 4, "V": 3}  # undotted prefix length by leading letter


@dataclass(frozen=True)
class MedicalCode:
    """A diagnosis code in one coding system.

    ``raw`` is the source text verbatim; ``normalized`` is uppercase with a
    single dot between category and subcode and no whitespace.
    """

    system: CodeSystem
    raw: str
    normalized: str

    def __str__(self) -> str:
        return f"{self.system.value}:{self.normalized}"

    @property
    def category(self) -> str:
        """The part before the dot (e.g. ``F10`` for ``F10.13``)."""
        return self.normalized.split(".", 1)[0]

    @property
    def subcode(self) -> str:
        """The part after the dot, or ``""`` when absent."""
        parts = self.normalized.split(".", 1)
        return parts[1] if len(parts) == 2 else ""


def normalize_code(system: CodeSystem, raw: str) -> MedicalCode:
    """Build a :class:`MedicalCode` with a canonical ``normalized`` form.

    Accepts dotted and undotted input (``30400`` becomes ``304.00``).
    Normalization is idempotent. Raises :class:`MalformedCode` when the
    cleaned text cannot match the system's shape.
    """
    text = raw.strip()
    if not text:
        raise MalformedCode(f"empty {system.value} code")
    compact = re.sub(r"\s+", "", text).upper()

    if system is CodeSystem.SNOMED:
        # SNOMED CT identifiers are plain integer strings; no dot structure.
        if not compact.isdigit():
            raise MalformedCode(f"not a SNOMED concept id: {raw!r}")
        return MedicalCode(system, raw, compact)

    if system is CodeSystem.ICD10:
        candidate = _insert_dot(compact, 3) if "." not in compact else compact
        if not _ICD10_RE.match(candidate):
            raise MalformedCode(f"not an ICD-10 code: {raw!r}")
        return MedicalCode(system, raw, candidate)

    if system is CodeSystem.ICD9:
        cat_len = _ICD9_CAT_LEN.get(compact[:1], 3)
        candidate = _insert_dot(compact, cat_len) if "." not in compact else compact
        if not _ICD9_RE.match(candidate):
            raise MalformedCode(f"not an ICD-9 code: {raw!r}")
        return MedicalCode(system, raw, candidate)

    raise MalformedCode(f"unknown coding system {system!r}")


def _insert_dot(compact: str, cat_len: int) -> str:
    if len(compact) <= cat_len:
        return compact
    return compact[:cat_len] + "." + compact[cat_len:]


@dataclass(frozen=True)
class Visit:
    """One encounter: a 1-based ordinal, a calendar date, and its codes.

    Codes keep order of first appearance; duplicates (same system and
    normalized form) are removed at construction time via :func:`dedup_codes`.
    """

    visit_index: int
    date: date
    codes: tuple[MedicalCode, ...]


def dedup_codes(codes: list[MedicalCode]) -> tuple[MedicalCode, ...]:
    """Drop repeated (system, normalized) pairs, keeping the first position."""
    seen: set[tuple[CodeSystem, str]] = set()
    out: list[MedicalCode] = []
    for c in codes:
        key = (c.system, c.normalized)
        if key not in seen:
            seen.add(key)
            out.append(c)
    return tuple(out)


@dataclass(frozen=True)
class PatientRecord:
    """A patient's visits sorted ascending by (date, source visit id)."""

    patient_id: str
    visits: tuple[Visit, ...]


@dataclass(frozen=True)
class Violation:
    """One broken record invariant; violations are data, not exceptions."""

    patient_id: str
    visit_index: int | None
    rule: str

    def __str__(self) -> str:
        at = f" visit {self.visit_index}" if self.visit_index is not None else ""
        return f"{self.patient_id}{at}: {self.rule}"


def validate_record(rec: PatientRecord) -> list[Violation]:
    """Check every record/visit invariant; empty list means the record is clean."""
    out: list[Violation] = []
    expected = 1
    prev_date: date | None = None
    for v in rec.visits:
        if v.visit_index != expected:
            out.append(Violation(rec.patient_id, v.visit_index,
                                 f"visit_index not contiguous (expected {expected})"))
        expected += 1
        if prev_date is not None and v.date < prev_date:
            out.append(Violation(rec.patient_id, v.visit_index, "dates non-decreasing"))
        prev_date = v.date
        if not v.codes:
            out.append(Violation(rec.patient_id, v.visit_index, "visit has no codes"))
        seen: set[tuple[CodeSystem, str]] = set()
        for c in v.codes:
            key = (c.system, c.normalized)
            if key in seen:
                out.append(Violation(rec.patient_id, v.visit_index,
                                     f"duplicate code {c.normalized} within visit"))
            seen.add(key)
    return out


# --- canonical JSON form -----------------------------------------------------

def code_to_dict(c: MedicalCode) -> dict:
    return {"system": c.system.value, "code": c.normalized}


def visit_to_dict(v: Visit) -> dict:
    return {"date": v.date.isoformat(), "codes": [code_to_dict(c) for c in v.codes]}


def record_to_dict(rec: PatientRecord) -> dict:
    return {"patient_id": rec.patient_id, "visits": [visit_to_dict(v) for v in rec.visits]}


def record_from_dict(obj: dict) -> PatientRecord:
    try:
        pid = obj["patient_id"]
        visits = []
        for i, vo in enumerate(obj["visits"], start=1):
            codes = [normalize_code(CodeSystem(co["system"]), co["code"])
                     for co in vo["codes"]]
            visits.append(Visit(i, date.fromisoformat(vo["date"]), dedup_codes(codes)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad canonical patient object: {exc}") from exc
    return PatientRecord(str(pid), tuple(visits))


# --- code catalog ------------------------------------------------------------

@dataclass
class CodeCatalog:
    """Map (system, normalized code) -> description text.

    Missing lookups raise :class:`UnknownCode`; there is no silent default.
    """

    descriptions: dict[tuple[CodeSystem, str], str] = field(default_factory=dict)

    def describe(self, code: MedicalCode) -> str:
        try:
            return self.descriptions[(code.system, code.normalized)]
        except KeyError:
            raise UnknownCode(f"no description for {code}") from None

    def get(self, code: MedicalCode) -> str | None:
        return self.descriptions.get((code.system, code.normalized))

    def __len__(self) -> int:
        return len(self.descriptions)

    def __contains__(self, code: MedicalCode) -> bool:
        return (code.system, code.normalized) in self.descriptions


def read_catalog(path: str) -> CodeCatalog:
    """Read a ``system<TAB>code<TAB>description`` TSV (header row required)."""
    cat = CodeCatalog()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["system", "code", "description"]:
            raise MissingColumn("catalog header must be system<TAB>code<TAB>description",
                                path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise ParseError("catalog row needs 3 columns", path=path, line=lineno)
            system_txt, code_txt, desc = row[0].strip(), row[1], row[2]
            try:
                system = CodeSystem(system_txt)
                code = normalize_code(system, code_txt)
            except (ValueError, MalformedCode) as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
            if not desc.strip():
                raise ParseError(f"empty description for {code}", path=path, line=lineno)
            cat.descriptions[(code.system, code.normalized)] = desc.strip()
    return cat


def write_catalog(cat: CodeCatalog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("system\tcode\tdescription\n")
        for (system, code), desc in sorted(cat.descriptions.items(),
                                           key=lambda kv: (kv[0][0].value, kv[0][1])):
            fh.write(f"{system.value}\t{code}\t{desc}\n")
