"""Instruction-tuning dataset export: one JSON object per line."""

from __future__ import annotations

import json
from dataclasses import dataclass

from ..cohort import Cohort
from ..errors import CodeWithoutDescription, OverLength
from ..model import CodeCatalog
from .prompts import OPEN_TAG, OracleProfile, build_prompt, condition_phrase


@dataclass(frozen=True)
class ExportReport:
    n_written: int
    skipped: tuple[tuple[str, str], ...]  # (patient_id, reason)


def export_finetune_dataset(
    cohort: Cohort,
    catalog: CodeCatalog,
    style: str,
    path: str,
    profile: OracleProfile | None = None,
    strict: bool = False,
) -> ExportReport:
    """Write ``{"prompt": ..., "response": "Yes</Diagnosis>"|"No</Diagnosis>"}``
    lines; label 1 maps to Yes. Unbuildable samples are skipped and reported,
    or fatal with ``strict=True``. Output is byte-stable across runs."""
    profile = profile or OracleProfile()
    condition = condition_phrase(cohort.task)
    skipped: list[tuple[str, str]] = []
    n_written = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sample in cohort.samples:
            try:
                prompt = build_prompt(sample, catalog, condition, style, profile)
            except (OverLength, CodeWithoutDescription) as exc:
                if strict:
                    exc.args = (f"sample {sample.patient_id}: {exc}",)
                    raise
                skipped.append((sample.patient_id,
                                f"{type(exc).__name__}: {exc}"))
                continue
            response = ("Yes" if sample.label == 1 else "No") + "</Diagnosis>"
            fh.write(json.dumps({"prompt": prompt.text, "response": response})
                     + "\n")
            n_written += 1
    return ExportReport(n_written, tuple(skipped))
