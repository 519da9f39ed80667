"""Case/control sample construction for one prediction task.

A patient becomes a *case* when the first visit containing a code matching
the task definition has index >= 2; that visit supplies the label and its
index, and only the strictly earlier visits form the model input (using the
diagnosis visit itself would leak the outcome). A patient with no matching
code anywhere and at least two visits becomes a *control*, labelled at the
final visit with all earlier visits as input. Everyone else is excluded with
a counted reason.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import EmptyCohort, ParseError
from .icd import CaseDefinition, classify
from .model import PatientRecord, Visit, record_from_dict, record_to_dict

EXCLUDE_FIRST_VISIT = "diagnosis at first visit"
EXCLUDE_TOO_FEW_VISITS = "fewer than 2 visits"
EXCLUDE_EMPTY_INPUT = "empty input code set"


@dataclass(frozen=True)
class CohortSample:
    """One prediction instance: a visit prefix, its label, and the visit that
    defined the label."""

    patient_id: str
    input_visits: tuple[Visit, ...]
    label: int
    target_visit_index: int


@dataclass
class Cohort:
    task: str
    samples: list[CohortSample] = field(default_factory=list)
    exclusions: dict[str, int] = field(default_factory=dict)

    @property
    def n_positive(self) -> int:
        return sum(s.label for s in self.samples)

    @property
    def n_excluded(self) -> int:
        return sum(self.exclusions.values())


def _first_matching_visit(rec: PatientRecord, definition: CaseDefinition) -> Visit | None:
    for visit in rec.visits:
        if any(classify(code, definition) for code in visit.codes):
            return visit
    return None


def build_cohort(records: list[PatientRecord], definition: CaseDefinition) -> Cohort:
    """Assign every patient to case, control, or a counted exclusion."""
    cohort = Cohort(task=definition.name)

    def exclude(reason: str) -> None:
        cohort.exclusions[reason] = cohort.exclusions.get(reason, 0) + 1

    for rec in records:
        first_match = _first_matching_visit(rec, definition)
        if first_match is not None:
            if first_match.visit_index == 1:
                exclude(EXCLUDE_FIRST_VISIT)
                continue
            input_visits = rec.visits[:first_match.visit_index - 1]
            label = 1
            target = first_match.visit_index
        else:
            if len(rec.visits) < 2:
                exclude(EXCLUDE_TOO_FEW_VISITS)
                continue
            input_visits = rec.visits[:-1]
            label = 0
            target = rec.visits[-1].visit_index
        if not any(v.codes for v in input_visits):
            exclude(EXCLUDE_EMPTY_INPUT)
            continue
        cohort.samples.append(CohortSample(rec.patient_id, tuple(input_visits), label, target))
    return cohort


@dataclass(frozen=True)
class CohortStats:
    task: str
    n_samples: int
    n_positive: int
    mean_visits: float
    mean_codes: float
    vocabulary_size: int
    base_rate: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cohort_stats(cohort: Cohort) -> CohortStats:
    """Summary statistics over input visits only (the model-visible history)."""
    if not cohort.samples:
        raise EmptyCohort(f"cohort {cohort.task!r} has no samples")
    n = len(cohort.samples)
    total_visits = sum(len(s.input_visits) for s in cohort.samples)
    total_codes = sum(len(v.codes) for s in cohort.samples for v in s.input_visits)
    vocab = {(c.system, c.normalized) for s in cohort.samples for v in s.input_visits for c in v.codes}
    return CohortStats(
        task=cohort.task,
        n_samples=n,
        n_positive=cohort.n_positive,
        mean_visits=total_visits / n,
        mean_codes=total_codes / n,
        vocabulary_size=len(vocab),
        base_rate=cohort.n_positive / n,
    )


# --- cohort files ------------------------------------------------------------

def _sample_to_dict(s: CohortSample) -> dict:
    rec = PatientRecord(s.patient_id, s.input_visits)
    return {
        "patient_id": s.patient_id,
        "label": s.label,
        "target_visit": s.target_visit_index,
        "input_visits": record_to_dict(rec)["visits"],
    }


def _sample_from_dict(obj: dict) -> CohortSample:
    rec = record_from_dict({"patient_id": obj["patient_id"], "visits": obj["input_visits"]})
    label = obj["label"]
    if label not in (0, 1):
        raise ParseError(f"label must be 0 or 1, got {label!r}")
    return CohortSample(rec.patient_id, rec.visits, int(label), int(obj["target_visit"]))


def write_cohort(cohort: Cohort, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in cohort.samples:
            fh.write(json.dumps(_sample_to_dict(s), ensure_ascii=False) + "\n")


def read_cohort(path: str, task: str = "") -> Cohort:
    cohort = Cohort(task=task)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                cohort.samples.append(_sample_from_dict(obj))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad cohort line: {exc}", path=path, line=lineno) from exc
            except ParseError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    return cohort
