"""Sensitivity probes: instruction swap and risk-factor injection.

The instruction swap re-asks every sample with "High or Low" in place of
"Yes or No" and reports two rates: adherence (the oracle actually produces
High/Low tokens) and inversion (among adherent samples, the hard decision at
threshold 0.5 flips). The injection probe appends extra diagnoses to the
final input visit and reports the signed probability change.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..cohort import CohortSample
from ..model import CodeCatalog, MedicalCode, Visit, dedup_codes
from .oracle import InferenceResult, Oracle, run_inference
from .prompts import OracleProfile


@dataclass(frozen=True)
class SwapRow:
    patient_id: str
    p_yes: float
    p_high: float
    adherent: bool
    inverted: bool
    error: str | None


@dataclass(frozen=True)
class SwapReport:
    n_samples: int
    n_adherent: int
    n_inverted: int
    rows: tuple[SwapRow, ...]

    @property
    def adherence_rate(self) -> float:
        return self.n_adherent / self.n_samples if self.n_samples else 0.0

    @property
    def inversion_rate(self) -> float:
        return self.n_inverted / self.n_adherent if self.n_adherent else 0.0


def probe_instruction_swap(
    samples: list[CohortSample],
    catalog: CodeCatalog,
    condition: str,
    style: str,
    oracle: Oracle,
    profile: OracleProfile,
) -> SwapReport:
    yesno = run_inference(samples, catalog, condition, style, oracle, profile,
                          instruction="yesno", request_tag="yn")
    highlow = run_inference(samples, catalog, condition, style, oracle, profile,
                            instruction="highlow",
                            yes_variants=("high",), no_variants=("low",),
                            request_tag="hl")
    rows = []
    n_adherent = 0
    n_inverted = 0
    for base, swapped in zip(yesno, highlow):
        error = base.error or swapped.error
        adherent = error is None and not swapped.indeterminate
        inverted = False
        if adherent:
            n_adherent += 1
            inverted = (base.p_yes > 0.5) != (swapped.p_yes > 0.5)
            n_inverted += int(inverted)
        rows.append(SwapRow(base.patient_id, base.p_yes, swapped.p_yes,
                            adherent, inverted, error))
    return SwapReport(len(samples), n_adherent, n_inverted, tuple(rows))


def inject_codes(sample: CohortSample,
                 codes: list[MedicalCode]) -> CohortSample:
    """Append extra diagnoses to the final input visit (duplicates collapse)."""
    if not sample.input_visits:
        raise ValueError("sample has no input visits to inject into")
    last = sample.input_visits[-1]
    widened = Visit(last.visit_index, last.date,
                    dedup_codes(list(last.codes) + list(codes)))
    return replace(sample, input_visits=sample.input_visits[:-1] + (widened,))


@dataclass(frozen=True)
class InjectionRow:
    patient_id: str
    p_before: float
    p_after: float
    error: str | None

    @property
    def delta(self) -> float:
        return self.p_after - self.p_before


@dataclass(frozen=True)
class InjectionReport:
    rows: tuple[InjectionRow, ...]

    @property
    def mean_delta(self) -> float:
        clean = [r.delta for r in self.rows if r.error is None]
        return sum(clean) / len(clean) if clean else 0.0


def probe_risk_factor_injection(
    samples: list[CohortSample],
    injected: list[MedicalCode],
    catalog: CodeCatalog,
    condition: str,
    style: str,
    oracle: Oracle,
    profile: OracleProfile,
) -> InjectionReport:
    """Score each sample before and after appending ``injected`` codes."""
    before = run_inference(samples, catalog, condition, style, oracle, profile,
                           request_tag="base")
    after = run_inference([inject_codes(s, injected) for s in samples],
                          catalog, condition, style, oracle, profile,
                          request_tag="inj")
    rows = tuple(
        InjectionRow(b.patient_id, b.p_yes, a.p_yes, b.error or a.error)
        for b, a in zip(before, after))
    return InjectionReport(rows)
