"""Frozen prompt templates (version v1.0) and token estimation.

Two prompt styles exist. Style ``v1-aggregate`` lists each distinct past
diagnosis once with its occurrence count across visits, ordered by first
occurrence. Style ``v2-temporal`` renders one block per visit with
``{N} days later`` separator lines between consecutive visits. Both end with
the literal opening tag ``<Diagnosis>``; the oracle is asked to continue from
exactly that position.

Downstream probabilities depend on this exact wording, so the templates are
versioned and must not be edited casually: bump ``TEMPLATE_VERSION`` when
changing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..cohort import CohortSample
from ..errors import CodeWithoutDescription, OverLength
from ..model import CodeCatalog, MedicalCode

TEMPLATE_VERSION = "v1.0"
OPEN_TAG = "<Diagnosis>"
STYLE_V1 = "v1-aggregate"
STYLE_V2 = "v2-temporal"

_INSTRUCTION_BASE = (
    "You are a clinical risk prediction assistant. Given a patient's past "
    "diagnoses, answer whether the patient will be diagnosed with "
    "{condition} in the future. "
)
INSTRUCTION_YESNO = _INSTRUCTION_BASE + "Answer only Yes or No inside the tags."
INSTRUCTION_HIGHLOW = _INSTRUCTION_BASE + "Answer only High or Low inside the tags."
V1_HEADER = "Past diagnoses (with occurrence counts across visits):"

_CONDITION_PHRASES = {
    "OUD": "opioid use disorder",
    "SUD": "substance use disorder",
    "Diabetes": "diabetes mellitus",
}


def condition_phrase(task: str) -> str:
    """Human-readable condition name for a task; unknown tasks pass through."""
    return _CONDITION_PHRASES.get(task, task)


@dataclass(frozen=True)
class OracleProfile:
    """Operational limits of the token-probability oracle."""

    context_limit: int = 4096
    k: int = 20
    endpoint: str = ""
    parallelism: int = 4

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.context_limit < 1:
            raise ValueError("context_limit must be at least 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")


@dataclass(frozen=True)
class PromptInstance:
    """One rendered prompt, ready for the oracle."""

    text: str
    style: str
    token_estimate: int
    patient_id: str
    label: int

    def __post_init__(self):
        if not self.text.endswith(OPEN_TAG):
            raise ValueError(f"prompt text must end with {OPEN_TAG}")
        if self.token_estimate < 1:
            raise ValueError("token_estimate must be >= 1")


def estimate_tokens(text: str) -> int:
    """Conservative heuristic: ceil(UTF-8 bytes / 4) plus 8 overhead.

    The exact tokenizer lives on the oracle side; its response may carry an
    exact count that overrides this estimate.
    """
    return math.ceil(len(text.encode("utf-8")) / 4) + 8


def _descriptions(codes: list[MedicalCode], catalog: CodeCatalog) -> list[str]:
    missing = [str(c) for c in codes if c not in catalog]
    if missing:
        raise CodeWithoutDescription(missing)
    return [catalog.describe(c) for c in codes]


def _instruction(condition: str, instruction: str) -> str:
    template = {"yesno": INSTRUCTION_YESNO,
                "highlow": INSTRUCTION_HIGHLOW}.get(instruction)
    if template is None:
        raise ValueError(f"unknown instruction style {instruction!r}")
    return template.format(condition=condition)


def build_prompt_v1(sample: CohortSample, catalog: CodeCatalog, condition: str,
                    instruction: str = "yesno") -> PromptInstance:
    """Aggregate prompt: distinct diagnoses with counts, by first occurrence."""
    order: list[MedicalCode] = []
    counts: dict[MedicalCode, int] = {}
    for visit in sample.input_visits:
        for code in visit.codes:
            if code not in counts:
                counts[code] = 0
                order.append(code)
            counts[code] += 1
    described = _descriptions(order, catalog)
    lines = [_instruction(condition, instruction), V1_HEADER]
    lines.extend(f"- {desc} (x{counts[code]})"
                 for code, desc in zip(order, described))
    lines.append(OPEN_TAG)
    text = "\n".join(lines)
    return PromptInstance(text, STYLE_V1, estimate_tokens(text),
                          sample.patient_id, sample.label)


def build_prompt_v2(sample: CohortSample, catalog: CodeCatalog, condition: str,
                    profile: OracleProfile,
                    instruction: str = "yesno") -> PromptInstance:
    """Temporal prompt: per-visit blocks with day-interval separators."""
    lines = [_instruction(condition, instruction)]
    previous = None
    for i, visit in enumerate(sample.input_visits, start=1):
        if previous is not None:
            lines.append(f"{(visit.date - previous.date).days} days later")
        lines.append(f"Visit {i}:")
        lines.extend(f"- {desc}"
                     for desc in _descriptions(list(visit.codes), catalog))
        previous = visit
    lines.append(OPEN_TAG)
    text = "\n".join(lines)
    estimate = estimate_tokens(text)
    if estimate > profile.context_limit:
        raise OverLength(estimate, profile.context_limit)
    return PromptInstance(text, STYLE_V2, estimate,
                          sample.patient_id, sample.label)


def build_prompt(sample: CohortSample, catalog: CodeCatalog, condition: str,
                 style: str, profile: OracleProfile,
                 instruction: str = "yesno") -> PromptInstance:
    if style == STYLE_V1:
        return build_prompt_v1(sample, catalog, condition, instruction)
    if style == STYLE_V2:
        return build_prompt_v2(sample, catalog, condition, profile, instruction)
    raise ValueError(f"unknown prompt style {style!r}")
