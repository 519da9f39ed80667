"""Readers and writers for patient corpora, plus the patient-level split.

Canonical corpus files are JSON Lines (see :mod:`ehr_riskbench.model`).
Synthea CSV exports are ingested by treating each distinct encounter id as one
visit and mapping SNOMED CT condition codes to ICD-10 through a user-supplied
two-column TSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .errors import EmptyInput, MalformedCode, MissingColumn, ParseError
from .model import (
    CodeSystem,
    MedicalCode,
    PatientRecord,
    Visit,
    dedup_codes,
    normalize_code,
    record_from_dict,
    record_to_dict,
)

SPLIT_NAMES = ("train", "val", "test")


# --- canonical JSONL ---------------------------------------------------------

def write_canonical(records: list[PatientRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")


def read_canonical(path: str) -> list[PatientRecord]:
    out: list[PatientRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=lineno) from exc
            try:
                out.append(record_from_dict(obj))
            except ParseError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    return out


# --- SNOMED -> ICD-10 map ----------------------------------------------------

@dataclass(frozen=True)
class SnomedMap:
    """SNOMED concept id -> normalized ICD-10 code, with file provenance."""

    mapping: dict[str, str]
    path: str
    rows: int

    def get(self, snomed: str) -> str | None:
        return self.mapping.get(snomed.strip())


def load_snomed_map(path: str) -> SnomedMap:
    """Read a ``snomed<TAB>icd10`` TSV (header required); ICD-10 values are
    normalized and must be well formed."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["snomed", "icd10"]:
            raise MissingColumn("map header must be snomed<TAB>icd10", path=path, line=1)
        rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise ParseError("map row needs 2 columns", path=path, line=lineno)
            try:
                icd = normalize_code(CodeSystem.ICD10, row[1])
            except MalformedCode as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
            mapping[row[0].strip()] = icd.normalized
            rows += 1
    return SnomedMap(mapping, path, rows)


# --- Synthea CSV ingestion ---------------------------------------------------

@dataclass
class IngestReport:
    """Counters accumulated while reading a Synthea export."""

    patients_in: int = 0
    records_out: int = 0
    visits: int = 0
    codes: int = 0
    unmapped: int = 0
    kept_snomed: int = 0
    patients_dropped_no_visits: int = 0
    rows_unknown_patient: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _column(fieldnames: list[str] | None, name: str, path: str) -> str:
    if fieldnames is None:
        raise MissingColumn(f"empty CSV, expected column {name}", path=path, line=1)
    for f in fieldnames:
        if f.strip().lstrip("﻿").upper() == name:
            return f
    raise MissingColumn(f"missing column {name}", path=path, line=1)


def read_synthea(
    patients_csv: str,
    conditions_csv: str,
    snomed_map: SnomedMap,
    keep_unmapped: bool = False,
) -> tuple[list[PatientRecord], IngestReport]:
    """Build canonical records from Synthea ``patients.csv`` + ``conditions.csv``.

    One visit per distinct encounter id, dated by the encounter's start date.
    Unmapped SNOMED codes are dropped and counted unless ``keep_unmapped``,
    in which case they survive as SNOMED codes. Patients with no surviving
    visit are dropped and counted.
    """
    report = IngestReport()

    with open(patients_csv, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        id_col = _column(reader.fieldnames, "ID", patients_csv)
        patient_ids = [row[id_col].strip() for row in reader if row.get(id_col, "").strip()]
    if len(set(patient_ids)) != len(patient_ids):
        raise ParseError("duplicate patient ids", path=patients_csv)
    report.patients_in = len(patient_ids)
    known = set(patient_ids)

    # encounters[(patient, encounter_id)] = (date, [codes])
    encounters: dict[tuple[str, str], tuple[date, list[MedicalCode]]] = {}
    with open(conditions_csv, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            pass  # empty file: zero visits
        else:
            p_col = _column(reader.fieldnames, "PATIENT", conditions_csv)
            e_col = _column(reader.fieldnames, "ENCOUNTER", conditions_csv)
            s_col = _column(reader.fieldnames, "START", conditions_csv)
            c_col = _column(reader.fieldnames, "CODE", conditions_csv)
            for lineno, row in enumerate(reader, start=2):
                pid = row[p_col].strip()
                if not pid:
                    continue
                if pid not in known:
                    report.rows_unknown_patient += 1
                    continue
                enc = row[e_col].strip()
                try:
                    visit_date = date.fromisoformat(row[s_col].strip()[:10])
                except ValueError as exc:
                    raise ParseError(f"bad START date {row[s_col]!r}",
                                     path=conditions_csv, line=lineno) from exc
                icd = snomed_map.get(row[c_col])
                if icd is not None:
                    code = MedicalCode(CodeSystem.ICD10, row[c_col].strip(), icd)
                elif keep_unmapped:
                    try:
                        code = normalize_code(CodeSystem.SNOMED, row[c_col])
                    except MalformedCode as exc:
                        raise ParseError(str(exc), path=conditions_csv, line=lineno) from exc
                    report.kept_snomed += 1
                else:
                    report.unmapped += 1
                    code = None
                key = (pid, enc)
                if key not in encounters:
                    encounters[key] = (visit_date, [])
                if code is not None:
                    encounters[key][1].append(code)

    by_patient: dict[str, list[tuple[date, str, list[MedicalCode]]]] = {}
    for (pid, enc), (visit_date, codes) in encounters.items():
        by_patient.setdefault(pid, []).append((visit_date, enc, codes))

    records: list[PatientRecord] = []
    for pid in patient_ids:
        visits_raw = by_patient.get(pid, [])
        visits_raw.sort(key=lambda t: (t[0], t[1]))  # date, then source encounter id
        visits: list[Visit] = []
        for visit_date, _enc, codes in visits_raw:
            deduped = dedup_codes(codes)
            if not deduped:
                continue  # encounter with no surviving codes
            visits.append(Visit(len(visits) + 1, visit_date, deduped))
        if not visits:
            report.patients_dropped_no_visits += 1
            continue
        records.append(PatientRecord(pid, tuple(visits)))
        report.visits += len(visits)
        report.codes += sum(len(v.codes) for v in visits)
    report.records_out = len(records)
    return records, report


# --- patient-level split -----------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    """Total, disjoint assignment of patients to train/val/test."""

    assignment: dict[str, str]
    seed: int
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)  # train, val, test

    def ids(self, split: str) -> list[str]:
        return sorted(pid for pid, s in self.assignment.items() if s == split)

    def counts(self) -> dict[str, int]:
        out = {name: 0 for name in SPLIT_NAMES}
        for s in self.assignment.values():
            out[s] += 1
        return out


def split_patients(
    ids: list[str],
    seed: int,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    strata: dict[str, str] | None = None,
) -> SplitAssignment:
    """Shuffle patients with a seeded RNG and slice into train/test/val.

    Sizes are train = floor(r_train*N), test = floor(r_test*N), val = the
    remainder. Input order does not matter (ids are sorted before the
    shuffle). With ``strata``, the same rule is applied within each stratum.
    """
    if not ids:
        raise EmptyInput("no patient ids to split")
    if len(set(ids)) != len(ids):
        raise ValueError("patient ids must be unique")
    r_train, _r_val, r_test = ratios
    assignment: dict[str, str] = {}

    def assign(group: list[str], rng: np.random.Generator) -> None:
        order = [group[i] for i in rng.permutation(len(group))]
        n = len(order)
        n_train = int(np.floor(r_train * n))
        n_test = int(np.floor(r_test * n))
        for pid in order[:n_train]:
            assignment[pid] = "train"
        for pid in order[n_train:n_train + n_test]:
            assignment[pid] = "test"
        for pid in order[n_train + n_test:]:
            assignment[pid] = "val"

    rng = np.random.default_rng(seed)
    if strata is None:
        assign(sorted(ids), rng)
    else:
        groups: dict[str, list[str]] = {}
        for pid in sorted(ids):
            groups.setdefault(strata.get(pid, ""), []).append(pid)
        for key in sorted(groups):
            assign(groups[key], rng)
    return SplitAssignment(assignment, seed, ratios)


def write_split(split: SplitAssignment, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("patient_id\tsplit\n")
        for pid in sorted(split.assignment):
            fh.write(f"{pid}\t{split.assignment[pid]}\n")


def read_split(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip().split("\t")[:2] != ["patient_id", "split"]:
            raise MissingColumn("split header must be patient_id<TAB>split", path=path, line=1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2 or parts[1] not in SPLIT_NAMES:
                raise ParseError(f"bad split row {line!r}", path=path, line=lineno)
            out[parts[0]] = parts[1]
    return out
