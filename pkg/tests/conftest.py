"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

from datetime import date, timedelta

from ehr_riskbench.model import CodeSystem, PatientRecord, Visit, dedup_codes, normalize_code


def mk_code(raw: str, system: CodeSystem = CodeSystem.ICD10):
    return normalize_code(system, raw)


def mk_visit(index: int, codes: list, day: int = 0, system: CodeSystem = CodeSystem.ICD10) -> Visit:
    """Build a visit from raw code strings (or (system, raw) tuples)."""
    resolved = []
    for c in codes:
        if isinstance(c, tuple):
            resolved.append(normalize_code(CodeSystem(c[0]), c[1]))
        else:
            resolved.append(normalize_code(system, c))
    return Visit(index, date(2020, 1, 1) + timedelta(days=day), dedup_codes(resolved))


def mk_record(pid: str, visit_codes: list[list], system: CodeSystem = CodeSystem.ICD10) -> PatientRecord:
    """One visit per inner list, dated a week apart."""
    visits = tuple(mk_visit(i + 1, codes, day=7 * i, system=system)
                   for i, codes in enumerate(visit_codes))
    return PatientRecord(pid, visits)
