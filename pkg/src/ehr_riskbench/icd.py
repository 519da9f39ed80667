"""ICD-9 / ICD-10 range matching, prefix hierarchy, and case definitions.

Three definitions ship as package data (OUD, SUD, Diabetes); user files in the
same format may add more. Range semantics:

* ICD-10 ranges span bare 3-character categories; any subcode of a category in
  the span matches (``F10 - F19`` covers ``F10.13``).
* ICD-9 ranges whose endpoints carry subcodes compare the full decimal code,
  with a short subcode ordered *below* its zero-padded form, so ``304.7`` does
  not fall inside ``304.70 - 304.73``.
* ICD-9 ranges with bare endpoints (``291 - 292``) cover whole categories.
* A wildcard range (``250.xx``) covers every code of one category.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from importlib import resources

from .errors import MalformedCode, MissingColumn, OverlapWarning, ParseError, SystemMismatch, UnsupportedSystem
from .model import CodeSystem, MedicalCode, normalize_code

BUILTIN_TASKS = ("OUD", "SUD", "Diabetes")


@dataclass(frozen=True)
class CodeRange:
    """An inclusive code span within one system; ``end == start`` for singletons."""

    system: CodeSystem
    start: str
    end: str
    wildcard: bool = False


@dataclass(frozen=True)
class CaseDefinition:
    """A named condition given by the union of its code ranges."""

    name: str
    ranges: tuple[CodeRange, ...]


def _icd9_cat_key(category: str) -> tuple[int, int]:
    # Tabular order: 001-999, then V codes, then E codes.
    if category.startswith("V"):
        return (1, int(category[1:]))
    if category.startswith("E"):
        return (2, int(category[1:]))
    return (0, int(category))


def _icd9_sub_key(subcode: str) -> tuple[int, int]:
    # Digit tuple padded with -1 so "7" sorts below "70".
    digits = [int(ch) for ch in subcode]
    while len(digits) < 2:
        digits.append(-1)
    return tuple(digits)  # type: ignore[return-value]


def _icd9_code_key(code: MedicalCode) -> tuple[tuple[int, int], tuple[int, int]]:
    return (_icd9_cat_key(code.category), _icd9_sub_key(code.subcode))


def make_range(system: CodeSystem, start: str, end: str, wildcard: bool = False) -> CodeRange:
    """Validate and normalize a range specification.

    Raises ``ValueError`` on malformed endpoints, mixed bare/decimal ICD-9
    endpoints, subcoded ICD-10 endpoints, or ``start > end``.
    """
    if system is CodeSystem.SNOMED:
        raise ValueError("ranges are only defined for ICD systems")
    try:
        s = normalize_code(system, start)
        e = normalize_code(system, end)
    except MalformedCode as exc:
        raise ValueError(str(exc)) from exc

    if wildcard:
        if s.subcode or s.normalized != e.normalized:
            raise ValueError(f"wildcard range must be a single bare category, got {start}..{end}")
        return CodeRange(system, s.normalized, e.normalized, True)

    if system is CodeSystem.ICD10:
        if s.subcode or e.subcode:
            raise ValueError(f"ICD-10 range endpoints must be bare categories, got {start}..{end}")
        if s.normalized > e.normalized:
            raise ValueError(f"range start {start} after end {end}")
    else:
        if bool(s.subcode) != bool(e.subcode):
            raise ValueError(f"ICD-9 endpoints must both carry subcodes or neither: {start}..{end}")
        if _icd9_cat_key(s.category)[0] != _icd9_cat_key(e.category)[0]:
            raise ValueError(f"ICD-9 endpoints must share a prefix class: {start}..{end}")
        if _icd9_code_key(s) > _icd9_code_key(e):
            raise ValueError(f"range start {start} after end {end}")
    return CodeRange(system, s.normalized, e.normalized, False)


def matches_range(code: MedicalCode, rng: CodeRange) -> bool:
    """True when ``code`` falls inside ``rng``; systems must agree."""
    if code.system is not rng.system:
        raise SystemMismatch(f"{code.system.value} code tested against {rng.system.value} range")

    if rng.wildcard:
        return code.category == rng.start

    if rng.system is CodeSystem.ICD10:
        return rng.start <= code.category <= rng.end

    start = normalize_code(CodeSystem.ICD9, rng.start)
    end = normalize_code(CodeSystem.ICD9, rng.end)
    if not start.subcode:  # bare endpoints: whole-category span
        key = _icd9_cat_key(code.category)
        return _icd9_cat_key(start.category) <= key <= _icd9_cat_key(end.category)
    return _icd9_code_key(start) <= _icd9_code_key(code) <= _icd9_code_key(end)


def classify(code: MedicalCode, definition: CaseDefinition) -> bool:
    """True when any range of the definition matches; other-system ranges are skipped."""
    for rng in definition.ranges:
        if rng.system is not code.system:
            continue
        if matches_range(code, rng):
            return True
    return False


# --- hierarchy ---------------------------------------------------------------

def _load_chapters() -> list[tuple[str, str, str]]:
    text = resources.files("ehr_riskbench.data").joinpath("icd10_chapters.tsv").read_text("utf-8")
    rows = [line.split("\t") for line in text.splitlines()[1:] if line.strip()]
    return [(r[0], r[1], r[2]) for r in rows]


_CHAPTERS = _load_chapters()


def chapter_of(category: str) -> str | None:
    """ICD-10 chapter bucket id (e.g. ``F01-F99``) containing a category, if any."""
    for start, end, _title in _CHAPTERS:
        if start <= category <= end:
            return f"{start}-{end}"
    return None


def ancestors(code: MedicalCode) -> list[str]:
    """Prefixes of a code, most specific first, excluding the code itself.

    ``F10.13`` yields ``["F10.1", "F10", "F01-F99"]``; ICD-9 codes stop at the
    category (no chapter buckets). SNOMED is unsupported.
    """
    if code.system is CodeSystem.SNOMED:
        raise UnsupportedSystem("SNOMED has no prefix hierarchy here")
    out: list[str] = []
    sub = code.subcode
    for cut in range(len(sub) - 1, 0, -1):
        out.append(f"{code.category}.{sub[:cut]}")
    if sub:
        out.append(code.category)
    if code.system is CodeSystem.ICD10:
        chapter = chapter_of(code.category)
        if chapter is not None:
            out.append(chapter)
    return out


# --- definition files --------------------------------------------------------

def _range_interval(rng: CodeRange):
    """Comparable (lo, hi) interval for overlap checks within one system."""
    if rng.system is CodeSystem.ICD10:
        return (rng.start, ""), (rng.end, "￿")
    start = normalize_code(CodeSystem.ICD9, rng.start)
    end = normalize_code(CodeSystem.ICD9, rng.end)
    if rng.wildcard or not start.subcode:
        return ((_icd9_cat_key(start.category), (-1, -1)),
                (_icd9_cat_key(end.category), (10, 10)))
    return _icd9_code_key(start), _icd9_code_key(end)


def _warn_overlaps(name: str, ranges: list[CodeRange]) -> None:
    by_system: dict[CodeSystem, list[CodeRange]] = {}
    for rng in ranges:
        by_system.setdefault(rng.system, []).append(rng)
    for system_ranges in by_system.values():
        for i, a in enumerate(system_ranges):
            lo_a, hi_a = _range_interval(a)
            for b in system_ranges[i + 1:]:
                lo_b, hi_b = _range_interval(b)
                if max(lo_a, lo_b) <= min(hi_a, hi_b):
                    warnings.warn(
                        f"definition {name}: ranges {a.start}-{a.end} and "
                        f"{b.start}-{b.end} overlap", OverlapWarning)


def parse_case_definitions(text: str, path: str = "<builtin>") -> dict[str, CaseDefinition]:
    """Parse a ``name/system/start/end/wildcard`` TSV into definitions."""
    lines = text.splitlines()
    if not lines:
        return {}
    header = [h.strip().lower() for h in lines[0].split("\t")]
    if header[:5] != ["name", "system", "start", "end", "wildcard"]:
        raise MissingColumn("definition header must be name/system/start/end/wildcard",
                            path=path, line=1)
    grouped: dict[str, list[CodeRange]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 5:
            raise ParseError("definition row needs 5 columns", path=path, line=lineno)
        name, system_txt, start, end, wild_txt = (c.strip() for c in cols[:5])
        if wild_txt not in ("0", "1"):
            raise ParseError(f"wildcard must be 0 or 1, got {wild_txt!r}", path=path, line=lineno)
        try:
            system = CodeSystem(system_txt)
            rng = make_range(system, start, end, wildcard=wild_txt == "1")
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=lineno) from exc
        grouped.setdefault(name, []).append(rng)
    out: dict[str, CaseDefinition] = {}
    for name, ranges in grouped.items():
        _warn_overlaps(name, ranges)
        out[name] = CaseDefinition(name, tuple(ranges))
    return out


def builtin_definitions_text() -> str:
    """The shipped definition table, verbatim (also what ``dump-defs`` prints)."""
    return resources.files("ehr_riskbench.data").joinpath("case_definitions.tsv").read_text("utf-8")


def load_case_definitions(path: str | None = None) -> dict[str, CaseDefinition]:
    """Load definitions from a TSV file, or the built-in table when ``path`` is None."""
    if path is None:
        return parse_case_definitions(builtin_definitions_text())
    with open(path, encoding="utf-8") as fh:
        return parse_case_definitions(fh.read(), path=path)
