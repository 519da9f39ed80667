"""Deterministic mock oracle speaking the line-delimited top-k protocol.

Run as ``python3 -m ehr_riskbench.llm.mock_oracle RULES.json``: each stdin
line is a request ``{"id": ..., "prompt": ..., "k": ...}`` and each stdout
line the matching response ``{"id": ..., "topk": [{"token": ..., "prob":
...}, ...]}``.

Scoring is a keyword model: ``logit = bias + sum(weight * occurrences)`` over
lowercased prompt text, clipped to [-1, 1], then emitted as the token pair
``("Yes", 0.5 + logit/2)`` / ``("No", 0.5 - logit/2)`` so that two-way
softmax extraction recovers ``sigmoid(logit)`` exactly. Under the High/Low
instruction the mock answers High/Low tokens instead (unless
``adhere_highlow`` is false, which models an instruction-ignoring LLM), and
flips its answer for a deterministic pseudo-random ``inversion_rate``
fraction of patients. Request ids may carry a ``#tag`` suffix; the part
before ``#`` identifies the patient for inversion and planted overrides, so
repeated calls for one patient behave consistently.

Rules file keys (all optional): ``keywords`` (map of keyword to weight),
``bias``, ``inversion_rate``, ``inversion_seed``, ``adhere_highlow``,
``planted`` (map of patient id to a forced logit).
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field

from .prompts import INSTRUCTION_HIGHLOW

_HIGHLOW_MARKER = INSTRUCTION_HIGHLOW.rsplit(". ", 1)[1]  # the answer sentence


@dataclass(frozen=True)
class MockRules:
    keywords: dict[str, float] = field(default_factory=dict)
    bias: float = 0.0
    inversion_rate: float = 0.0
    inversion_seed: int = 0
    adhere_highlow: bool = True
    planted: dict[str, float] = field(default_factory=dict)


def load_rules(path: str) -> MockRules:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f for f in MockRules.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown mock rule keys: {sorted(unknown)}")
    return MockRules(**raw)


def score_prompt(rules: MockRules, prompt: str) -> float:
    low = prompt.lower()
    return rules.bias + sum(weight * low.count(keyword.lower())
                            for keyword, weight in rules.keywords.items())


def _patient_of(request_id: str) -> str:
    return request_id.split("#", 1)[0]


def _inverts(rules: MockRules, patient_id: str) -> bool:
    if rules.inversion_rate <= 0.0:
        return False
    digest = hashlib.sha256(
        f"{rules.inversion_seed}:{patient_id}".encode()).hexdigest()
    roll = int(digest[:16], 16) / float(1 << 64)
    return roll < rules.inversion_rate


def respond(rules: MockRules, request: dict) -> dict:
    request_id = request["id"]
    prompt = request["prompt"]
    k = int(request.get("k", 20))
    patient = _patient_of(request_id)
    logit = rules.planted.get(patient, score_prompt(rules, prompt))
    logit = max(-1.0, min(1.0, logit))
    p_hi = 0.5 + logit / 2.0
    p_lo = 0.5 - logit / 2.0
    wants_highlow = _HIGHLOW_MARKER in prompt
    if wants_highlow and rules.adhere_highlow:
        if _inverts(rules, patient):
            p_hi, p_lo = p_lo, p_hi
        pair = [("High", p_hi), ("Low", p_lo)]
    else:
        pair = [("Yes", p_hi), ("No", p_lo)]
    pair.sort(key=lambda tp: -tp[1])
    return {"id": request_id,
            "topk": [{"token": t, "prob": p} for t, p in pair[:k]]}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python3 -m ehr_riskbench.llm.mock_oracle RULES.json",
              file=sys.stderr)
        return 2
    rules = load_rules(argv[0])
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            reply = respond(rules, request)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            reply = {"id": None, "error": f"bad request: {exc}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
