"""Prompt construction, top-k Yes/No probability extraction, oracle clients,
fine-tune dataset export, and sensitivity probes."""

from .extract import TopKDistribution, YesNoProb, extract_yes_no
from .export import export_finetune_dataset
from .oracle import (
    HttpOracle, InferenceResult, InProcessOracle, MockProcessOracle,
    run_inference, to_prediction_set,
)
from .probes import probe_instruction_swap, probe_risk_factor_injection
from .prompts import (
    OracleProfile, PromptInstance, build_prompt, build_prompt_v1,
    build_prompt_v2, condition_phrase, estimate_tokens,
)

__all__ = [
    "TopKDistribution", "YesNoProb", "extract_yes_no",
    "export_finetune_dataset",
    "HttpOracle", "InferenceResult", "InProcessOracle", "MockProcessOracle",
    "run_inference", "to_prediction_set",
    "probe_instruction_swap", "probe_risk_factor_injection",
    "OracleProfile", "PromptInstance", "build_prompt", "build_prompt_v1",
    "build_prompt_v2", "condition_phrase", "estimate_tokens",
]
