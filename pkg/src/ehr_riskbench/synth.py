"""Deterministic synthetic corpus generator with planted risk rules.

Background codes are drawn uniformly from a vocabulary that deliberately
avoids every code matched by the rules' target definitions, so that a target
diagnosis can only appear through a planted rule firing. A rule plants its
trigger code in a random non-final visit of a triggered patient and, with the
configured probability, a code matching the target definition in a strictly
later visit.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .errors import ConfigError
from .icd import CaseDefinition, classify, load_case_definitions
from .model import CodeSystem, MedicalCode, PatientRecord, Visit, dedup_codes, normalize_code

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class PlantedRule:
    trigger_code: str
    target_definition: str
    probability: float
    trigger_fraction: float = 0.3


@dataclass
class SynthConfig:
    n_patients: int
    vocab_size: int
    visits_min: int = 2
    visits_max: int = 8
    codes_min: int = 1
    codes_max: int = 4
    rules: list[PlantedRule] = field(default_factory=list)
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise ConfigError("n_patients must be >= 1")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if not (1 <= self.visits_min <= self.visits_max):
            raise ConfigError("need 1 <= visits_min <= visits_max")
        if not (1 <= self.codes_min <= self.codes_max):
            raise ConfigError("need 1 <= codes_min <= codes_max")
        if self.rules and self.visits_min < 2:
            raise ConfigError("planted rules need visits_min >= 2")
        for rule in self.rules:
            if not 0.0 <= rule.probability <= 1.0:
                raise ConfigError(f"rule probability {rule.probability} outside [0, 1]")
            if not 0.0 <= rule.trigger_fraction <= 1.0:
                raise ConfigError(f"trigger fraction {rule.trigger_fraction} outside [0, 1]")
        triggers = {r.trigger_code for r in self.rules}
        if self.vocab_size < len(triggers):
            raise ConfigError("vocab_size smaller than the number of distinct trigger codes")


def synth_config_from_toml(path: str) -> SynthConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    try:
        rules = [
            PlantedRule(
                trigger_code=r["trigger"],
                target_definition=r["target"],
                probability=float(r["probability"]),
                trigger_fraction=float(r.get("trigger_fraction", 0.3)),
            )
            for r in raw.get("rules", [])
        ]
        cfg = SynthConfig(
            n_patients=int(raw["n_patients"]),
            vocab_size=int(raw["vocab_size"]),
            visits_min=int(raw.get("visits_min", 2)),
            visits_max=int(raw.get("visits_max", 8)),
            codes_min=int(raw.get("codes_min", 1)),
            codes_max=int(raw.get("codes_max", 4)),
            rules=rules,
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic config: {exc}") from exc
    cfg.validate()
    return cfg


# Letters whose ICD-10 chapters are untouched by the built-in definitions.
_NEUTRAL_LETTERS = "GHJKLMNRZ"


def background_vocabulary(size: int, avoid: list[CaseDefinition]) -> list[MedicalCode]:
    """Enumerate ``size`` ICD-10 codes, none of which matches any definition in
    ``avoid``."""
    out: list[MedicalCode] = []
    i = 0
    budget = 200 * (size + 10)
    while len(out) < size and i < budget:
        letter = _NEUTRAL_LETTERS[i % len(_NEUTRAL_LETTERS)]
        number = (i // len(_NEUTRAL_LETTERS)) % 100
        sub = (i // (len(_NEUTRAL_LETTERS) * 100)) % 10
        code = normalize_code(CodeSystem.ICD10, f"{letter}{number:02d}.{sub}")
        i += 1
        if any(classify(code, d) for d in avoid):
            continue
        out.append(code)
    if len(out) < size:
        raise ConfigError(f"could not enumerate {size} background codes clear of the target definitions")
    return out


def representative_target(definition: CaseDefinition) -> MedicalCode:
    """A fixed ICD-10 code matching the definition (first range's start, subcode 0)."""
    for rng in definition.ranges:
        if rng.system is CodeSystem.ICD10:
            code = normalize_code(CodeSystem.ICD10, f"{rng.start}.0")
            if classify(code, definition):
                return code
    raise ConfigError(f"definition {definition.name} has no ICD-10 range to plant")


def generate_synthetic(
    cfg: SynthConfig,
    definitions: dict[str, CaseDefinition] | None = None,
) -> list[PatientRecord]:
    """Generate ``cfg.n_patients`` records, fully determined by ``cfg.seed``."""
    cfg.validate()
    if definitions is None:
        definitions = load_case_definitions()
    targets: list[tuple[PlantedRule, MedicalCode, MedicalCode, CaseDefinition]] = []
    for rule in cfg.rules:
        if rule.target_definition not in definitions:
            raise ConfigError(f"unknown target definition {rule.target_definition!r}")
        definition = definitions[rule.target_definition]
        trigger = normalize_code(CodeSystem.ICD10, rule.trigger_code)
        if classify(trigger, definition):
            raise ConfigError(
                f"trigger {trigger.normalized} itself matches {definition.name}; "
                "the rule would label its own trigger")
        targets.append((rule, trigger, representative_target(definition), definition))

    avoid = [t[3] for t in targets]
    vocab = background_vocabulary(cfg.vocab_size, avoid)
    rng = np.random.default_rng(cfg.seed)
    records: list[PatientRecord] = []
    for i in range(cfg.n_patients):
        n_visits = int(rng.integers(cfg.visits_min, cfg.visits_max + 1))
        visit_codes: list[list[MedicalCode]] = []
        for _ in range(n_visits):
            n_codes = int(rng.integers(cfg.codes_min, cfg.codes_max + 1))
            # without replacement within the visit: visits are code sets
            picks = rng.choice(len(vocab), size=min(n_codes, len(vocab)), replace=False)
            visit_codes.append([vocab[j] for j in picks])
        for rule, trigger, target_code, _definition in targets:
            if rng.random() >= rule.trigger_fraction:
                continue
            t = int(rng.integers(1, n_visits))  # 1-based, never the last visit
            visit_codes[t - 1].append(trigger)
            if rng.random() < rule.probability:
                u = int(rng.integers(t + 1, n_visits + 1))
                visit_codes[u - 1].append(target_code)
        start = date(2015, 1, 1) + timedelta(days=int(rng.integers(0, 1000)))
        visits: list[Visit] = []
        current = start
        for k, codes in enumerate(visit_codes, start=1):
            visits.append(Visit(k, current, dedup_codes(codes)))
            current = current + timedelta(days=int(rng.integers(7, 91)))
        records.append(PatientRecord(f"SYN{i:05d}", tuple(visits)))
    return records


def corpus_codes(records: list[PatientRecord]) -> list[MedicalCode]:
    """Distinct codes of a corpus, sorted by (system, normalized form)."""
    seen: dict[tuple[str, str], MedicalCode] = {}
    for rec in records:
        for visit in rec.visits:
            for code in visit.codes:
                seen.setdefault((code.system.value, code.normalized), code)
    return [seen[key] for key in sorted(seen)]
